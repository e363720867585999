//! Name-keyed factories for the pluggable strategy families.

use std::collections::BTreeMap;
use std::fmt;

type Factory<T, C> = Box<dyn Fn(&C) -> Result<Box<T>, String> + Send + Sync>;

/// Maps a strategy name (the `kind` string in the config file) to a
/// constructor for a boxed trait object.
pub struct Registry<T: ?Sized, C> {
    family: &'static str,
    entries: BTreeMap<String, Factory<T, C>>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RegistryError {
    #[error("unknown {family} kind `{name}` (known: {known})")]
    Unknown {
        family: &'static str,
        name: String,
        known: String,
    },
    #[error("cannot build {family} `{name}`: {reason}")]
    Build {
        family: &'static str,
        name: String,
        reason: String,
    },
}

impl<T: ?Sized, C> Registry<T, C> {
    pub fn new(family: &'static str) -> Self {
        Registry {
            family,
            entries: BTreeMap::new(),
        }
    }

    /// Registers (or replaces) a factory under `name`.
    pub fn register<F>(&mut self, name: &str, factory: F) -> &mut Self
    where
        F: Fn(&C) -> Result<Box<T>, String> + Send + Sync + 'static,
    {
        self.entries.insert(name.to_string(), Box::new(factory));
        self
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn family(&self) -> &'static str {
        self.family
    }

    pub fn build(&self, name: &str, cfg: &C) -> Result<Box<T>, RegistryError> {
        let factory = self
            .entries
            .get(name)
            .ok_or_else(|| RegistryError::Unknown {
                family: self.family,
                name: name.to_string(),
                known: self.names().collect::<Vec<_>>().join(", "),
            })?;
        factory(cfg).map_err(|reason| RegistryError::Build {
            family: self.family,
            name: name.to_string(),
            reason,
        })
    }
}

impl<T: ?Sized, C> fmt::Debug for Registry<T, C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Registry")
            .field("family", &self.family)
            .field("names", &self.names().collect::<Vec<_>>())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    trait Greeter {
        fn greet(&self) -> String;
    }
    struct Hello(String);
    impl Greeter for Hello {
        fn greet(&self) -> String {
            format!("hello {}", self.0)
        }
    }

    #[test]
    fn build_by_name() {
        let mut reg: Registry<dyn Greeter, String> = Registry::new("greeter");
        reg.register("hello", |who: &String| {
            Ok(Box::new(Hello(who.clone())) as Box<dyn Greeter>)
        });
        let g = reg.build("hello", &"world".to_string()).unwrap();
        assert_eq!(g.greet(), "hello world");
        let err = reg.build("bye", &String::new()).err().unwrap();
        assert!(err.to_string().contains("known: hello"), "{err}");
    }
}
