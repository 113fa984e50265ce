use std::collections::{BTreeMap, BTreeSet};

use super::{ClassDef, FieldDef, MethodDef, MethodSig, Program, TypeDesc};
use crate::builtins;

/// Class lookup over a program plus the implicitly declared builtin classes.
#[derive(Debug, Clone)]
pub struct Hierarchy<'p> {
    classes: BTreeMap<&'p str, &'p ClassDef>,
    children: BTreeMap<&'p str, Vec<&'p str>>,
}

impl<'p> Hierarchy<'p> {
    pub fn new(program: &'p Program) -> Self {
        let mut classes = BTreeMap::new();
        for c in builtins::classes() {
            classes.insert(c.name.as_str(), c);
        }
        // program classes shadow nothing; a clash with a builtin is a validation error
        for c in &program.classes {
            classes.entry(c.name.as_str()).or_insert(c);
        }
        let mut children: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for c in classes.values() {
            if let Some(sup) = &c.superclass {
                children.entry(sup.as_str()).or_default().push(c.name.as_str());
            }
        }
        Hierarchy { classes, children }
    }

    pub fn class(&self, name: &str) -> Option<&'p ClassDef> {
        self.classes.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.classes.contains_key(name)
    }

    /// `name` followed by its superclasses, nearest first. Stops at a missing
    /// class or on a cycle.
    pub fn ancestry(&self, name: &str) -> Vec<&'p ClassDef> {
        let mut out: Vec<&ClassDef> = Vec::new();
        let mut cur = self.class(name);
        while let Some(c) = cur {
            if out.iter().any(|seen| seen.name == c.name) {
                break;
            }
            out.push(c);
            cur = c.superclass.as_deref().and_then(|s| self.class(s));
        }
        out
    }

    pub fn has_cycle(&self, name: &str) -> bool {
        let chain = self.ancestry(name);
        chain.last().and_then(|c| c.superclass.as_deref()).is_some_and(|s| chain.iter().any(|c| c.name == s))
    }

    /// True when `sub` equals `sup` or transitively extends it.
    pub fn is_subclass(&self, sub: &str, sup: &str) -> bool {
        self.ancestry(sub).iter().any(|c| c.name == sup)
    }

    /// Every transitive subclass of `name`, excluding `name`, sorted.
    pub fn subclasses(&self, name: &str) -> Vec<&'p str> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![name];
        while let Some(n) = stack.pop() {
            for &child in self.children.get(n).map(Vec::as_slice).unwrap_or(&[]) {
                if child != name && seen.insert(child) {
                    stack.push(child);
                }
            }
        }
        seen.into_iter().collect()
    }

    /// Finds the method `name(params)` visible from `class`, walking up the
    /// superclass chain. Returns the declaring class and the definition.
    pub fn resolve_method(
        &self,
        class: &str,
        name: &str,
        params: &[TypeDesc],
    ) -> Option<(&'p ClassDef, &'p MethodDef)> {
        self.ancestry(class).into_iter().find_map(|c| c.method(name, params).map(|m| (c, m)))
    }

    /// Resolves a call target signature to the declaring method. The return
    /// type must match too.
    pub fn resolve_sig(&self, sig: &MethodSig) -> Option<&'p MethodDef> {
        self.resolve_method(&sig.owner, &sig.name, &sig.params).map(|(_, m)| m).filter(|m| m.sig.ret == sig.ret)
    }

    pub fn resolve_field(&self, class: &str, field: &str) -> Option<(&'p ClassDef, &'p FieldDef)> {
        self.ancestry(class).into_iter().find_map(|c| c.field(field).map(|f| (c, f)))
    }

    /// Field layout of an instance: superclass fields first, each as
    /// (declaring class, field).
    pub fn instance_fields(&self, class: &str) -> Vec<(&'p str, &'p FieldDef)> {
        let mut chain = self.ancestry(class);
        chain.reverse();
        chain.into_iter().flat_map(|c| c.fields.iter().map(move |f| (c.name.as_str(), f))).collect()
    }

    /// Application (non-builtin) classes.
    pub fn application_classes(&self) -> impl Iterator<Item = &'p ClassDef> + '_ {
        self.classes.values().copied().filter(|c| !super::is_intrinsic_class(&c.name))
    }

    pub fn is_builtin(&self, name: &str) -> bool {
        super::is_intrinsic_class(name) && self.contains(name)
    }

    /// Method `sub` overrides `sup` when `sub.owner` is a proper subclass of
    /// `sup.owner` and both share name, params and return type.
    pub fn overrides(&self, sub: &MethodSig, sup: &MethodSig) -> bool {
        sub.owner != sup.owner
            && sub.same_selector(sup)
            && sub.ret == sup.ret
            && self.is_subclass(&sub.owner, &sup.owner)
    }

    pub fn type_exists(&self, t: &TypeDesc) -> bool {
        match t.base() {
            TypeDesc::Class(c) => self.contains(c),
            _ => true,
        }
    }
}
