//! Name-keyed registries for the interchangeable strategies of the pipeline.
//!
//! Each family (distance metric, kernel, dual solver, missing-positive policy)
//! is a trait. Implementations register a constructor under a stable name, and
//! configuration selects one at runtime by that name.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Registered constructors for one strategy family.
///
/// `A` is whatever the constructor needs to build the strategy (often `()`).
pub struct Registry<T: ?Sized, A = ()> {
    family: &'static str,
    entries: BTreeMap<&'static str, Entry<T, A>>,
}

struct Entry<T: ?Sized, A> {
    description: &'static str,
    build: fn(A) -> Arc<T>,
}

impl<T: ?Sized, A> Registry<T, A> {
    pub fn new(family: &'static str) -> Self {
        Self {
            family,
            entries: BTreeMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: &'static str,
        description: &'static str,
        build: fn(A) -> Arc<T>,
    ) {
        self.entries.insert(name, Entry { description, build });
    }

    pub fn build(&self, name: &str, args: A) -> Result<Arc<T>> {
        match self.entries.get(name) {
            Some(entry) => Ok((entry.build)(args)),
            None => Err(Error::UnknownStrategy {
                family: self.family,
                name: name.to_string(),
                available: self.names().join(", "),
            }),
        }
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    /// `(name, description)` pairs in name order.
    pub fn describe(&self) -> Vec<(&'static str, &'static str)> {
        self.entries
            .iter()
            .map(|(name, entry)| (*name, entry.description))
            .collect()
    }

    pub fn family(&self) -> &'static str {
        self.family
    }
}
