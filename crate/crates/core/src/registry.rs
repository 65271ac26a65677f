//! Name-keyed registries of interchangeable strategies.
//!
//! Convolution kernels, up-sampling interpolators and patch-voting rules are
//! each a family of implementations behind one trait. The network, trainer
//! and CLI pick a member by name at runtime.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// A strategy that can be looked up by name.
pub trait Strategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn describe(&self) -> &'static str {
        ""
    }
}

pub struct Registry<S: ?Sized + Strategy> {
    kind: &'static str,
    entries: Vec<Arc<S>>,
}

impl<S: ?Sized + Strategy> Registry<S> {
    pub fn new(kind: &'static str) -> Self {
        Registry {
            kind,
            entries: Vec::new(),
        }
    }

    /// Adds a strategy, replacing any existing entry with the same name.
    pub fn register(&mut self, strategy: Arc<S>) -> &mut Self {
        let name = strategy.name();
        self.entries.retain(|e| e.name() != name);
        self.entries.push(strategy);
        self
    }

    pub fn with(mut self, strategy: Arc<S>) -> Self {
        self.register(strategy);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<S>> {
        self.entries
            .iter()
            .find(|e| e.name() == name)
            .cloned()
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<S>> {
        self.entries.iter()
    }
}

impl<S: ?Sized + Strategy> fmt::Debug for Registry<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("kind", &self.kind)
            .field("entries", &self.names())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter: Strategy {
        fn greet(&self) -> String;
    }

    struct Hello;
    impl Strategy for Hello {
        fn name(&self) -> &'static str {
            "hello"
        }
    }
    impl Greeter for Hello {
        fn greet(&self) -> String {
            "hello".into()
        }
    }

    struct Loud;
    impl Strategy for Loud {
        fn name(&self) -> &'static str {
            "hello"
        }
    }
    impl Greeter for Loud {
        fn greet(&self) -> String {
            "HELLO".into()
        }
    }

    #[test]
    fn lookup_replace_and_unknown() {
        let mut reg: Registry<dyn Greeter> = Registry::new("greeter");
        reg.register(Arc::new(Hello));
        assert_eq!(reg.get("hello").unwrap().greet(), "hello");
        reg.register(Arc::new(Loud));
        assert_eq!(reg.names(), vec!["hello"]);
        assert_eq!(reg.get("hello").unwrap().greet(), "HELLO");
        let err = reg.get("bye").err().unwrap().to_string();
        assert!(err.contains("unknown greeter 'bye'") && err.contains("hello"), "{err}");
    }
}
