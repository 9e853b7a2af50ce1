//! `key=value` parameter lists.

use std::collections::BTreeMap;

use crate::commands::Failure;

pub struct Params(BTreeMap<String, String>);

impl Params {
    /// Parses `tokens`, rejecting unknown or repeated keys.
    pub fn parse(tokens: &[String], allowed: &[&str]) -> Result<Self, Failure> {
        let mut map = BTreeMap::new();
        for t in tokens {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| Failure::usage(format!("expected key=value, got `{t}`")))?;
            if !allowed.contains(&k) {
                return Err(Failure::usage(format!(
                    "unknown parameter `{k}` (expected one of: {})",
                    allowed.join(", ")
                )));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Failure::usage(format!("parameter `{k}` given twice")));
            }
        }
        Ok(Params(map))
    }

    pub fn has(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    fn raw(&self, key: &str) -> Result<&str, Failure> {
        self.0
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Failure::usage(format!("missing parameter `{key}`")))
    }

    pub fn f64(&self, key: &str) -> Result<f64, Failure> {
        number(key, self.raw(key)?)
    }

    pub fn usize(&self, key: &str) -> Result<usize, Failure> {
        let v = self.raw(key)?;
        v.trim()
            .parse()
            .map_err(|_| Failure::usage(format!("invalid value for `{key}`: `{v}` is not a non-negative integer")))
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, Failure> {
        self.raw(key)?.split(',').map(|x| number(key, x)).collect()
    }
}

fn number(key: &str, v: &str) -> Result<f64, Failure> {
    match v.trim().parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(Failure::usage(format!("invalid value for `{key}`: `{v}` is not a finite number"))),
    }
}
