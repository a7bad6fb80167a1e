//! On-disk dataset bundle: a line-oriented text format with a trailing
//! integrity checksum.
//!
//! Layout, in order:
//!   1. one JSON header line: `{"version":1,"n_items":…,"n_train":…,"n_test":…,"provenance":{…}}`
//!   2. `n_items` vocab lines `V <raw_key> <popularity>`, in index order
//!   3. `n_train` lines `T <prefix indices, space separated>|<target>`
//!   4. `n_test` lines  `E <prefix indices, space separated>|<target>`
//!   5. one line `C <sha256-hex>` over every preceding byte
//!
//! Raw keys must not contain whitespace; `save_bundle` rejects them rather
//! than write an unparseable file.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{DatasetBundle, ItemVocab, Provenance, SplitExample};
use crate::error::{Error, Result};

const BUNDLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    n_items: usize,
    n_train: usize,
    n_test: usize,
    provenance: Provenance,
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        write!(hex, "{byte:02x}").expect("writing to String");
    }
    hex
}

fn write_example(out: &mut String, tag: char, example: &SplitExample) {
    out.push(tag);
    out.push(' ');
    for (k, idx) in example.prefix.iter().enumerate() {
        if k > 0 {
            out.push(' ');
        }
        write!(out, "{idx}").expect("writing to String");
    }
    writeln!(out, "|{}", example.target).expect("writing to String");
}

pub fn save_bundle(path: &Path, bundle: &DatasetBundle) -> Result<()> {
    let header = Header {
        version: BUNDLE_VERSION,
        n_items: bundle.vocab.len(),
        n_train: bundle.train.len(),
        n_test: bundle.test.len(),
        provenance: bundle.provenance.clone(),
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for index in 0..bundle.vocab.len() {
        let raw = bundle.vocab.raw(index);
        if raw.chars().any(char::is_whitespace) || raw.is_empty() {
            return Err(Error::Format(format!(
                "item key {raw:?} cannot be stored in a bundle"
            )));
        }
        writeln!(out, "V {raw} {}", bundle.vocab.popularity(index)).expect("writing to String");
    }
    for example in &bundle.train {
        write_example(&mut out, 'T', example);
    }
    for example in &bundle.test {
        write_example(&mut out, 'E', example);
    }
    let checksum = sha256_hex(out.as_bytes());
    writeln!(out, "C {checksum}").expect("writing to String");
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_example(line_no: usize, rest: &str, n_items: usize) -> Result<SplitExample> {
    let parse_err = |msg: &str| Error::Parse {
        line: line_no,
        msg: msg.to_string(),
    };
    let (prefix_part, target_part) = rest
        .split_once('|')
        .ok_or_else(|| parse_err("example line is missing `|`"))?;
    let mut prefix = Vec::new();
    for token in prefix_part.split(' ') {
        let idx: usize = token
            .parse()
            .map_err(|_| parse_err(&format!("bad prefix index `{token}`")))?;
        prefix.push(idx);
    }
    let target: usize = target_part
        .parse()
        .map_err(|_| parse_err(&format!("bad target index `{target_part}`")))?;
    if prefix.is_empty() {
        return Err(parse_err("empty prefix"));
    }
    for &idx in prefix.iter().chain(std::iter::once(&target)) {
        if idx >= n_items {
            return Err(parse_err(&format!(
                "item index {idx} out of range (vocabulary has {n_items})"
            )));
        }
    }
    Ok(SplitExample { prefix, target })
}

pub fn load_bundle(path: &Path) -> Result<DatasetBundle> {
    let content =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;

    // Validate the trailing checksum before trusting anything else.
    let trimmed = content.strip_suffix('\n').unwrap_or(&content);
    let body_end = trimmed.rfind('\n').map(|p| p + 1).unwrap_or(0);
    let last_line = &trimmed[body_end..];
    let stored = last_line
        .strip_prefix("C ")
        .ok_or_else(|| Error::Format("bundle is missing its checksum line".into()))?;
    let actual = sha256_hex(&content.as_bytes()[..body_end]);
    if stored != actual {
        return Err(Error::Checksum {
            expected: stored.to_string(),
            actual,
        });
    }

    let mut lines = content[..body_end].lines().enumerate();
    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::Format("bundle has no header line".into()))?;
    let header: Header = serde_json::from_str(header_line).map_err(|e| Error::Parse {
        line: 1,
        msg: format!("bad bundle header: {e}"),
    })?;
    if header.version != BUNDLE_VERSION {
        return Err(Error::Version {
            found: header.version.to_string(),
            supported: BUNDLE_VERSION.to_string(),
        });
    }

    let mut vocab = ItemVocab::new();
    let mut train = Vec::with_capacity(header.n_train);
    let mut test = Vec::with_capacity(header.n_test);
    for (i, line) in lines {
        let line_no = i + 1;
        let parse_err = |msg: String| Error::Parse { line: line_no, msg };
        if let Some(rest) = line.strip_prefix("V ") {
            if vocab.len() == header.n_items {
                return Err(parse_err("more vocab lines than the header declares".into()));
            }
            let (raw, pop_str) = rest
                .split_once(' ')
                .ok_or_else(|| parse_err("vocab line needs `V <key> <popularity>`".into()))?;
            let popularity: u64 = pop_str
                .parse()
                .map_err(|_| parse_err(format!("bad popularity `{pop_str}`")))?;
            vocab.push_entry(raw, popularity)?;
        } else if let Some(rest) = line.strip_prefix("T ") {
            train.push(parse_example(line_no, rest, header.n_items)?);
        } else if let Some(rest) = line.strip_prefix("E ") {
            test.push(parse_example(line_no, rest, header.n_items)?);
        } else {
            return Err(parse_err(format!("unrecognized bundle line `{line}`")));
        }
    }

    if vocab.len() != header.n_items || train.len() != header.n_train || test.len() != header.n_test
    {
        return Err(Error::Format(format!(
            "bundle body does not match its header: {} items / {} train / {} test declared, \
             {} / {} / {} found",
            header.n_items,
            header.n_train,
            header.n_test,
            vocab.len(),
            train.len(),
            test.len()
        )));
    }

    Ok(DatasetBundle {
        vocab,
        train,
        test,
        provenance: header.provenance,
    })
}
