//! Text model format.
//!
//! ```text
//! probeforge-forest 1
//! n_features <p>
//! params n_trees=<T> min_samples_leaf=<m> max_features=<sqrt|all|k> max_depth=<d|none> bootstrap=<bool> seed=<s>
//! base_value <f64>
//! meta <key> <value>            (zero or more, keys sorted)
//! trees <T>
//! tree <node count>
//! S <feature> <threshold> <cover>   (split; left subtree follows, then right)
//! L <value> <cover>                 (leaf)
//! end
//! ```
//!
//! Nodes are written in pre-order. Floats use Rust's shortest round-trip
//! formatting, so save/load is lossless and saves are byte-stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ForestModel, ForestParams, Node, Tree};
use crate::error::{Error, Result};

pub const FORMAT_MAGIC: &str = "probeforge-forest";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_text(model: &ForestModel) -> String {
    let p = &model.params;
    let mut out = String::new();
    let _ = writeln!(out, "{FORMAT_MAGIC} {FORMAT_VERSION}");
    let _ = writeln!(out, "n_features {}", model.n_features);
    let _ = writeln!(
        out,
        "params n_trees={} min_samples_leaf={} max_features={} max_depth={} bootstrap={} seed={}",
        p.n_trees,
        p.min_samples_leaf,
        p.max_features,
        p.max_depth
            .map_or_else(|| "none".to_string(), |d| d.to_string()),
        p.bootstrap,
        p.seed
    );
    let _ = writeln!(out, "base_value {:?}", model.base_value);
    for (k, v) in &model.meta {
        let _ = writeln!(out, "meta {k} {v}");
    }
    let _ = writeln!(out, "trees {}", model.trees.len());
    for t in &model.trees {
        let _ = writeln!(out, "tree {}", t.nodes.len());
        write_preorder(t, 0, &mut out);
    }
    out.push_str("end\n");
    out
}

fn write_preorder(t: &Tree, i: usize, out: &mut String) {
    match t.nodes[i] {
        Node::Leaf { value, cover } => {
            let _ = writeln!(out, "L {value:?} {cover}");
        }
        Node::Split {
            feature,
            threshold,
            left,
            right,
            cover,
        } => {
            let _ = writeln!(out, "S {feature} {threshold:?} {cover}");
            write_preorder(t, left, out);
            write_preorder(t, right, out);
        }
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        match self.inner.next() {
            Some((i, l)) => {
                self.last = i + 1;
                Ok(l)
            }
            None => Err(self.err("unexpected end of file")),
        }
    }

    fn err(&self, detail: &str) -> Error {
        Error::Parse {
            what: format!("model line {}", self.last),
            detail: detail.to_string(),
        }
    }

    fn keyed(&mut self, key: &str) -> Result<&'a str> {
        let line = self.next()?;
        line.strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| self.err(&format!("expected `{key}`")))
    }
}

fn num<T: std::str::FromStr>(lines: &Lines<'_>, s: &str) -> Result<T> {
    s.parse()
        .map_err(|_| lines.err(&format!("bad number {s:?}")))
}

pub fn from_text(text: &str) -> Result<ForestModel> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        last: 0,
    };
    let header = lines.next()?;
    let version = header
        .strip_prefix(FORMAT_MAGIC)
        .map(str::trim)
        .ok_or_else(|| lines.err("not a probeforge forest file"))?;
    if version != FORMAT_VERSION.to_string() {
        return Err(Error::Version {
            found: version.to_string(),
            expected: FORMAT_VERSION.to_string(),
        });
    }
    let n_features: usize = {
        let v = lines.keyed("n_features")?.trim();
        num(&lines, v)?
    };

    let mut params = ForestParams::default();
    for kv in lines.keyed("params")?.split_whitespace() {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| lines.err("bad params entry"))?;
        match k {
            "n_trees" => params.n_trees = num(&lines, v)?,
            "min_samples_leaf" => params.min_samples_leaf = num(&lines, v)?,
            "max_features" => params.max_features = v.parse()?,
            "max_depth" => {
                params.max_depth = if v == "none" {
                    None
                } else {
                    Some(num(&lines, v)?)
                }
            }
            "bootstrap" => params.bootstrap = num(&lines, v)?,
            "seed" => params.seed = num(&lines, v)?,
            _ => return Err(lines.err(&format!("unknown parameter {k:?}"))),
        }
    }
    let base_value: f64 = {
        let v = lines.keyed("base_value")?.trim();
        num(&lines, v)?
    };

    let mut meta = BTreeMap::new();
    let n_trees: usize = loop {
        let line = lines.next()?;
        if let Some(rest) = line.strip_prefix("meta ") {
            let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
            meta.insert(k.to_string(), v.to_string());
        } else if let Some(rest) = line.strip_prefix("trees ") {
            break num(&lines, rest.trim())?;
        } else {
            return Err(lines.err("expected `meta` or `trees`"));
        }
    };

    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let count: usize = {
            let v = lines.keyed("tree")?.trim();
            num(&lines, v)?
        };
        let mut nodes = Vec::with_capacity(count);
        read_preorder(&mut lines, &mut nodes)?;
        if nodes.len() != count {
            return Err(lines.err(&format!(
                "tree declares {count} nodes but has {}",
                nodes.len()
            )));
        }
        trees.push(Tree { nodes });
    }
    if lines.next()? != "end" {
        return Err(lines.err("expected `end`"));
    }

    let model = ForestModel {
        trees,
        n_features,
        params,
        base_value,
        meta,
    };
    model.validate()?;
    Ok(model)
}

fn read_preorder(lines: &mut Lines<'_>, nodes: &mut Vec<Node>) -> Result<usize> {
    let line = lines.next()?;
    let f: Vec<&str> = line.split(' ').collect();
    let id = nodes.len();
    match f.as_slice() {
        ["L", value, cover] => {
            nodes.push(Node::Leaf {
                value: num(lines, value)?,
                cover: num(lines, cover)?,
            });
        }
        ["S", feature, threshold, cover] => {
            let (feature, threshold, cover) = (
                num(lines, feature)?,
                num(lines, threshold)?,
                num(lines, cover)?,
            );
            nodes.push(Node::Leaf { value: 0.0, cover });
            let left = read_preorder(lines, nodes)?;
            let right = read_preorder(lines, nodes)?;
            nodes[id] = Node::Split {
                feature,
                threshold,
                left,
                right,
                cover,
            };
        }
        _ => return Err(lines.err("expected a node record")),
    }
    Ok(id)
}

pub fn save(model: &ForestModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_text(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<ForestModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_text(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::train;
    use crate::matrix::Matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> ForestModel {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = Matrix::from_vec(80, 5, (0..400).map(|_| rng.random::<f64>()).collect()).unwrap();
        let y: Vec<f64> = (0..80).map(|_| rng.random::<f64>()).collect();
        let mut m = train(
            &x,
            &y,
            &ForestParams {
                n_trees: 3,
                max_depth: Some(6),
                ..Default::default()
            },
        )
        .unwrap();
        m.meta.insert("task_type".into(), "short_form".into());
        m
    }

    #[test]
    fn round_trip_predicts_identically() {
        let m = model();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.pfm");
        save(&m, &p).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back, m);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = Matrix::from_vec(100, 5, (0..500).map(|_| rng.random::<f64>()).collect()).unwrap();
        let a = m.predict(&q).unwrap();
        let b = back.predict(&q).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn saves_are_byte_stable() {
        let m = model();
        assert_eq!(to_text(&m), to_text(&m.clone()));
        assert_eq!(to_text(&from_text(&to_text(&m)).unwrap()), to_text(&m));
    }

    #[test]
    fn corrupt_and_version_errors() {
        let text = to_text(&model());
        assert!(matches!(
            from_text(&text.replacen("forest 1", "forest 9", 1)),
            Err(Error::Version { .. })
        ));
        let truncated: String = text.lines().take(12).collect::<Vec<_>>().join("\n");
        assert!(matches!(from_text(&truncated), Err(Error::Parse { .. })));
        assert!(matches!(from_text("garbage"), Err(Error::Parse { .. })));
        let bad = text.replacen("\nL ", "\nL x", 1);
        assert!(matches!(from_text(&bad), Err(Error::Parse { .. })));
    }
}
