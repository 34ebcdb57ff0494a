//! Line-oriented text container used for every on-disk artifact (checkpoints,
//! indexes, template sets).
//!
//! ```text
//! # reprog artifact v1
//! kind foundation
//! meta window_len 16
//! array shared.0.kernel 16x6x3
//! 1.2345678901234567e-1 ...
//! checksum <sha256 hex of all preceding bytes>
//! ```
//!
//! Numbers are written with 17 significant digits, which round-trips every
//! `f64` exactly and keeps files byte-stable for a fixed input.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const FORMAT_HEADER: &str = "# reprog artifact v1";

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn encode_array(out: &mut String, name: &str, t: &Tensor) {
    let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
    let _ = writeln!(out, "array {name} {}", dims.join("x"));
    let mut first = true;
    for v in t.data() {
        if !first {
            out.push(' ');
        }
        first = false;
        out.push_str(&fmt_f64(*v));
    }
    out.push('\n');
}

/// Checksum of a named parameter list in the artifact array encoding.
pub fn params_checksum<'a>(params: impl IntoIterator<Item = (String, &'a Tensor)>) -> String {
    let mut text = String::new();
    for (name, t) in params {
        encode_array(&mut text, &name, t);
    }
    sha256_hex(text.as_bytes())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub arrays: Vec<(String, Tensor)>,
}

impl Artifact {
    pub fn new(kind: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            meta: BTreeMap::new(),
            arrays: Vec::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn push_array(&mut self, name: impl Into<String>, t: Tensor) {
        self.arrays.push((name.into(), t));
    }

    fn body(&self) -> String {
        let mut out = String::new();
        out.push_str(FORMAT_HEADER);
        out.push('\n');
        let _ = writeln!(out, "kind {}", self.kind);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.arrays {
            encode_array(&mut out, name, t);
        }
        out
    }

    /// Checksum over the whole serialized body.
    pub fn checksum(&self) -> String {
        sha256_hex(self.body().as_bytes())
    }

    pub fn to_text(&self) -> String {
        let mut body = self.body();
        let sum = sha256_hex(body.as_bytes());
        let _ = writeln!(body, "checksum {sum}");
        body
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let fmt_err = |line: usize, reason: String| Error::Format {
            path: path.to_string(),
            line,
            reason,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l)).peekable();
        match lines.next() {
            Some((_, FORMAT_HEADER)) => {}
            Some((n, other)) => return Err(fmt_err(n, format!("unexpected header `{other}`"))),
            None => return Err(fmt_err(1, "empty artifact".into())),
        }
        let (n, kind_line) = lines
            .next()
            .ok_or_else(|| fmt_err(2, "missing kind".into()))?;
        let kind = kind_line
            .strip_prefix("kind ")
            .ok_or_else(|| fmt_err(n, "expected `kind <name>`".into()))?;
        let mut art = Artifact::new(kind);
        let mut stated_checksum = None;
        while let Some((n, line)) = lines.next() {
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                art.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("array ") {
                let (name, dims) = rest
                    .split_once(' ')
                    .ok_or_else(|| fmt_err(n, "expected `array <name> <dims>`".into()))?;
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| fmt_err(n, format!("bad dims `{dims}`: {e}")))?;
                let (vn, values) = lines
                    .next()
                    .ok_or_else(|| fmt_err(n + 1, format!("missing values for `{name}`")))?;
                let mut data = Vec::new();
                for tok in values.split(' ').filter(|s| !s.is_empty()) {
                    let v: f64 = tok
                        .parse()
                        .map_err(|e| fmt_err(vn, format!("bad number `{tok}`: {e}")))?;
                    if !v.is_finite() {
                        return Err(Error::Data {
                            path: path.to_string(),
                            line: vn,
                            reason: format!("non-finite value in `{name}`"),
                        });
                    }
                    data.push(v);
                }
                let t = Tensor::new(shape, data).map_err(|e| fmt_err(vn, e.to_string()))?;
                art.arrays.push((name.to_string(), t));
            } else if let Some(sum) = line.strip_prefix("checksum ") {
                stated_checksum = Some((n, sum.to_string()));
                if lines.peek().is_some() {
                    return Err(fmt_err(n + 1, "content after checksum".into()));
                }
            } else {
                return Err(fmt_err(n, format!("unrecognized line `{line}`")));
            }
        }
        let (n, stated) = stated_checksum.ok_or_else(|| {
            fmt_err(text.lines().count().max(1), "missing checksum line".into())
        })?;
        if stated != art.checksum() {
            return Err(fmt_err(n, "content checksum mismatch".into()));
        }
        Ok(art)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
        }
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format {
                path: format!("<{} artifact>", self.kind),
                line: 0,
                reason: format!("missing meta `{key}`"),
            })
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.meta(key)?.parse().map_err(|e: T::Err| Error::Format {
            path: format!("<{} artifact>", self.kind),
            line: 0,
            reason: format!("meta `{key}`: {e}"),
        })
    }

    pub fn array(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Format {
                path: format!("<{} artifact>", self.kind),
                line: 0,
                reason: format!("missing array `{name}`"),
            })
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(Error::Usage(format!(
                "expected a `{kind}` artifact, found `{}`",
                self.kind
            )));
        }
        Ok(())
    }
}
