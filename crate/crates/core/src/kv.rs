//! Line-oriented `key = value` text used for run configs and for the decoder
//! description embedded in checkpoints and bitstreams. `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvMap(BTreeMap<String, String>);

impl KvMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key=value, got {raw:?}", n + 1)));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>> {
        self.raw(key)
            .map(|s| s.parse::<V>().map_err(|_| Error::Config(format!("bad value for {key}: {s:?}"))))
            .transpose()
    }

    pub fn require<V: FromStr>(&self, key: &str) -> Result<V> {
        self.get(key)?.ok_or_else(|| Error::Config(format!("missing key {key}")))
    }

    /// Whitespace- or comma-separated list.
    pub fn get_list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>> {
        self.raw(key)
            .map(|s| {
                s.split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|p| !p.is_empty())
                    .map(|p| p.parse::<V>().map_err(|_| Error::Config(format!("bad list item for {key}: {p:?}"))))
                    .collect()
            })
            .transpose()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

pub fn join_list<V: Display>(items: &[V]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let kv = KvMap::parse("# run\nepochs = 150\nstrides = 5 3 2,2 2  # 1080p\n\n").unwrap();
        assert_eq!(kv.require::<usize>("epochs").unwrap(), 150);
        assert_eq!(kv.get_list::<usize>("strides").unwrap().unwrap(), vec![5, 3, 2, 2, 2]);
        assert!(kv.get::<usize>("missing").unwrap().is_none());
        assert!(KvMap::parse("no equals sign").is_err());
        let again = KvMap::parse(&kv.to_text()).unwrap();
        assert_eq!(again, kv);
    }
}
