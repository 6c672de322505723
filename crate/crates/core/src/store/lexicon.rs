use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconNode {
    pub name: String,
    #[serde(default)]
    pub children: Vec<LexiconNode>,
}

/// The object vocabulary shown on the subject's help panel. Paths are the
/// `/`-joined names from a top-level node down.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicon {
    roots: Vec<LexiconNode>,
    paths: HashSet<String>,
}

impl Lexicon {
    pub fn new(roots: Vec<LexiconNode>) -> Result<Self, String> {
        let mut paths = HashSet::new();
        fn walk(nodes: &[LexiconNode], prefix: &str, paths: &mut HashSet<String>) -> Result<(), String> {
            let mut names = BTreeSet::new();
            for n in nodes {
                if n.name.is_empty() || n.name.contains('/') {
                    return Err(format!("invalid name `{}` under `{prefix}`", n.name));
                }
                if !names.insert(n.name.as_str()) {
                    return Err(format!("duplicate sibling `{}` under `{prefix}`", n.name));
                }
                let path = if prefix.is_empty() { n.name.clone() } else { format!("{prefix}/{}", n.name) };
                walk(&n.children, &path, paths)?;
                paths.insert(path);
            }
            Ok(())
        }
        walk(&roots, "", &mut paths)?;
        Ok(Self { roots, paths })
    }

    /// Accepts either an array of top-level nodes or a single unnamed-root
    /// object whose children are the top level.
    pub fn from_json(value: serde_json::Value) -> Result<Self, String> {
        let roots = match value {
            serde_json::Value::Array(_) => serde_json::from_value(value).map_err(|e| e.to_string())?,
            other => serde_json::from_value::<LexiconNode>(other).map_err(|e| e.to_string())?.children,
        };
        Self::new(roots)
    }

    pub fn roots(&self) -> &[LexiconNode] {
        &self.roots
    }

    pub fn contains(&self, path: &str) -> bool {
        self.paths.contains(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &str> {
        self.paths.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }
}

/// `ancestor` is a proper segment-wise prefix of `path`.
pub fn is_strict_ancestor(ancestor: &str, path: &str) -> bool {
    path.len() > ancestor.len() && path.starts_with(ancestor) && path.as_bytes()[ancestor.len()] == b'/'
}
