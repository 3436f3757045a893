//! NGDF: the on-disk dataset directory.
//!
//! ```text
//! meta.json        name, sizes, metric, directed flag, feature file kind,
//!                  sha256 of every other file, and a sha256 of itself
//! edges.tsv        header "u\tv", then one 0-based edge per line
//! features.bin     "NGDF", u32 rows, u32 cols, row-major little-endian f32
//! features.bin.gz  the same bytes, gzip-compressed (optional alternative)
//! features.tsv     text fallback, one tab-separated row per node
//! labels.tsv       one class id per line, -1 for unlabeled
//! split_train.idx  one node index per line (also split_val, split_test)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::train::Metric;

pub const FORMAT: &str = "ngdf";
pub const VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"NGDF";
const META: &str = "meta.json";
const EDGES: &str = "edges.tsv";
const LABELS: &str = "labels.tsv";
const SPLITS: [&str; 3] = ["split_train.idx", "split_val.idx", "split_test.idx"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FeatureFormat {
    #[default]
    #[serde(rename = "bin")]
    Bin,
    #[serde(rename = "bin.gz")]
    BinGz,
    #[serde(rename = "tsv")]
    Tsv,
}

impl FeatureFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            FeatureFormat::Bin => "features.bin",
            FeatureFormat::BinGz => "features.bin.gz",
            FeatureFormat::Tsv => "features.tsv",
        }
    }
}

impl std::str::FromStr for FeatureFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bin" => Ok(FeatureFormat::Bin),
            "bin.gz" | "gz" => Ok(FeatureFormat::BinGz),
            "tsv" => Ok(FeatureFormat::Tsv),
            other => Err(Error::input(format!(
                "unknown feature format '{other}' (bin, bin.gz, tsv)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub num_nodes: usize,
    pub num_edges: usize,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub metric: Metric,
    pub directed: bool,
    pub features: FeatureFormat,
    /// sha256 (hex) of each data file's bytes, keyed by file name.
    pub checksums: BTreeMap<String, String>,
    /// sha256 of this document serialized with `meta_sha256` set to "".
    pub meta_sha256: String,
}

impl Meta {
    fn self_digest(&self) -> Result<String> {
        let mut blank = self.clone();
        blank.meta_sha256.clear();
        Ok(sha256_hex(serde_json::to_string_pretty(&blank)?.as_bytes()))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn utf8<'a>(path: &Path, bytes: &'a [u8]) -> Result<&'a str> {
    std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        parse_err(path, line, "invalid UTF-8")
    })
}

/// Non-empty lines with their 1-based line numbers. Only a single trailing
/// newline is tolerated; blank lines elsewhere are errors.
fn lines<'a>(path: &'a Path, text: &'a str) -> impl Iterator<Item = Result<(usize, &'a str)>> + 'a {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let empty = body.is_empty();
    body.split('\n').enumerate().filter(move |_| !empty).map(move |(i, l)| {
        let l = l.strip_suffix('\r').unwrap_or(l);
        if l.trim().is_empty() {
            Err(parse_err(path, i + 1, "blank line"))
        } else {
            Ok((i + 1, l))
        }
    })
}

fn parse_index(path: &Path, line: usize, tok: &str, n: usize) -> Result<usize> {
    let v: usize = tok
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("expected a node index, found '{tok}'")))?;
    if v >= n {
        return Err(parse_err(
            path,
            line,
            format!("node index {v} out of range for {n} nodes"),
        ));
    }
    Ok(v)
}

pub(crate) fn parse_edges(path: &Path, text: &str, n: usize) -> Result<Vec<(usize, usize)>> {
    let mut it = lines(path, text);
    match it.next() {
        Some(Ok((_, h))) if h.trim() == "u\tv" => {}
        Some(Ok((l, h))) => return Err(parse_err(path, l, format!("expected header 'u<TAB>v', found '{h}'"))),
        Some(Err(e)) => return Err(e),
        None => return Err(parse_err(path, 1, "missing header 'u<TAB>v'")),
    }
    let mut edges = Vec::new();
    for item in it {
        let (line, l) = item?;
        let mut parts = l.split('\t');
        let (Some(u), Some(v), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err(path, line, "expected two tab-separated indices"));
        };
        edges.push((parse_index(path, line, u, n)?, parse_index(path, line, v, n)?));
    }
    Ok(edges)
}

pub(crate) fn parse_labels(path: &Path, text: &str) -> Result<Vec<i64>> {
    lines(path, text)
        .map(|item| {
            let (line, l) = item?;
            l.trim()
                .parse::<i64>()
                .map_err(|_| parse_err(path, line, format!("expected an integer label, found '{l}'")))
        })
        .collect()
}

pub(crate) fn parse_indices(path: &Path, text: &str, n: usize) -> Result<Vec<usize>> {
    lines(path, text)
        .map(|item| {
            let (line, l) = item?;
            parse_index(path, line, l, n)
        })
        .collect()
}

pub(crate) fn parse_features_tsv(path: &Path, text: &str) -> Result<Matrix<f32>> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for item in lines(path, text) {
        let (line, l) = item?;
        let before = data.len();
        for tok in l.split('\t') {
            let v: f32 = tok
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("expected a number, found '{tok}'")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, "non-finite feature value"));
            }
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(parse_err(
                    path,
                    line,
                    format!("row has {width} values, previous rows have {c}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols.unwrap_or(0), data)
}

fn parse_features_bin(path: &Path, bytes: &[u8]) -> Result<Matrix<f32>> {
    if bytes.len() < 12 || &bytes[..4] != MAGIC {
        return Err(parse_err(path, 0, "missing NGDF magic header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != rows * cols * 4 {
        return Err(parse_err(
            path,
            0,
            format!(
                "{} payload bytes for a {rows}x{cols} matrix (expected {})",
                body.len(),
                rows * cols * 4
            ),
        ));
    }
    let data: Vec<f32> = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(parse_err(
            path,
            0,
            format!("non-finite value at byte offset {}", 12 + 4 * pos),
        ));
    }
    Matrix::from_vec(rows, cols, data)
}

fn features_bin_bytes(x: &Matrix<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + 4 * x.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(x.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(x.cols() as u32).to_le_bytes());
    for v in x.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn features_tsv_text(x: &Matrix<f32>) -> String {
    let mut out = String::new();
    for r in 0..x.rows() {
        let row: Vec<String> = x.row(r).iter().map(|v| format!("{v}")).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
    out
}

pub(crate) fn edges_text(edges: &[(usize, usize)]) -> String {
    let mut out = String::from("u\tv\n");
    for (u, v) in edges {
        out.push_str(&format!("{u}\t{v}\n"));
    }
    out
}

fn list_text<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|x| format!("{x}\n")).collect()
}

/// Loads and validates an NGDF directory.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META);
    let meta_bytes = read_file(&meta_path)?;
    let meta: Meta = serde_json::from_slice(&meta_bytes).map_err(|e| parse_err(&meta_path, e.line(), e.to_string()))?;
    if meta.format != FORMAT || meta.version != VERSION {
        return Err(parse_err(
            &meta_path,
            0,
            format!(
                "unsupported format {} v{} (expected {FORMAT} v{VERSION})",
                meta.format, meta.version
            ),
        ));
    }
    let digest = meta.self_digest()?;
    if digest != meta.meta_sha256 {
        return Err(Error::Checksum {
            file: META.into(),
            expected: meta.meta_sha256.clone(),
            found: digest,
        });
    }
    let feature_file = meta.features.file_name();
    let mut expected_files: Vec<&str> = vec![EDGES, feature_file, LABELS];
    expected_files.extend(SPLITS);
    for key in meta.checksums.keys() {
        if !expected_files.contains(&key.as_str()) {
            return Err(parse_err(
                &meta_path,
                0,
                format!("checksum listed for unexpected file '{key}'"),
            ));
        }
    }
    let read_checked = |name: &str| -> Result<(PathBuf, Vec<u8>)> {
        let path = dir.join(name);
        let bytes = read_file(&path)?;
        let want = meta
            .checksums
            .get(name)
            .ok_or_else(|| parse_err(&meta_path, 0, format!("no checksum recorded for {name}")))?;
        let found = sha256_hex(&bytes);
        if &found != want {
            return Err(Error::Checksum {
                file: name.into(),
                expected: want.clone(),
                found,
            });
        }
        Ok((path, bytes))
    };

    let n = meta.num_nodes;
    let (fpath, fbytes) = read_checked(feature_file)?;
    let features = match meta.features {
        FeatureFormat::Bin => parse_features_bin(&fpath, &fbytes)?,
        FeatureFormat::BinGz => {
            let mut raw = Vec::new();
            GzDecoder::new(&fbytes[..])
                .read_to_end(&mut raw)
                .map_err(|e| parse_err(&fpath, 0, format!("gzip: {e}")))?;
            parse_features_bin(&fpath, &raw)?
        }
        FeatureFormat::Tsv => parse_features_tsv(&fpath, utf8(&fpath, &fbytes)?)?,
    };
    if features.rows() != n {
        return Err(Error::Dimension {
            what: format!("feature rows in {feature_file} vs meta num_nodes"),
            expected: n,
            found: features.rows(),
        });
    }
    if features.cols() != meta.feature_dim {
        return Err(Error::Dimension {
            what: format!("feature columns in {feature_file} vs meta feature_dim"),
            expected: meta.feature_dim,
            found: features.cols(),
        });
    }

    let (epath, ebytes) = read_checked(EDGES)?;
    let edges = parse_edges(&epath, utf8(&epath, &ebytes)?, n)?;
    if edges.len() != meta.num_edges {
        return Err(Error::Dimension {
            what: "edge count in edges.tsv vs meta num_edges".into(),
            expected: meta.num_edges,
            found: edges.len(),
        });
    }
    let (lpath, lbytes) = read_checked(LABELS)?;
    let labels = parse_labels(&lpath, utf8(&lpath, &lbytes)?)?;
    if labels.len() != n {
        return Err(Error::Dimension {
            what: "labels in labels.tsv vs meta num_nodes".into(),
            expected: n,
            found: labels.len(),
        });
    }
    let mut parts = Vec::with_capacity(3);
    for name in SPLITS {
        let (p, b) = read_checked(name)?;
        parts.push(parse_indices(&p, utf8(&p, &b)?, n)?);
    }
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Dataset::new(
        meta.name,
        edges,
        features,
        labels,
        meta.num_classes,
        meta.metric,
        meta.directed,
        Split { train, val, test },
    )
}

/// Writes `ds` with binary features.
pub fn write_dataset(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    write_dataset_with(ds, dir, FeatureFormat::Bin)
}

pub fn write_dataset_with(ds: &Dataset, dir: impl AsRef<Path>, format: FeatureFormat) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let features = match format {
        FeatureFormat::Bin => features_bin_bytes(ds.features()),
        FeatureFormat::BinGz => {
            let mut enc = GzEncoder::new(Vec::new(), Compression::best());
            let path = dir.join(format.file_name());
            enc.write_all(&features_bin_bytes(ds.features()))
                .map_err(|e| Error::io(&path, e))?;
            enc.finish().map_err(|e| Error::io(&path, e))?
        }
        FeatureFormat::Tsv => features_tsv_text(ds.features()).into_bytes(),
    };
    let split = ds.split();
    let files: Vec<(&str, Vec<u8>)> = vec![
        (EDGES, edges_text(ds.edges()).into_bytes()),
        (format.file_name(), features),
        (LABELS, list_text(ds.labels()).into_bytes()),
        (SPLITS[0], list_text(&split.train).into_bytes()),
        (SPLITS[1], list_text(&split.val).into_bytes()),
        (SPLITS[2], list_text(&split.test).into_bytes()),
    ];
    let mut checksums = BTreeMap::new();
    for (name, bytes) in &files {
        checksums.insert(name.to_string(), sha256_hex(bytes));
        write_file(&dir.join(name), bytes)?;
    }
    // remove stale feature files from a previous write in another format
    for other in [FeatureFormat::Bin, FeatureFormat::BinGz, FeatureFormat::Tsv] {
        let p = dir.join(other.file_name());
        if other != format && p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    let mut meta = Meta {
        format: FORMAT.into(),
        version: VERSION,
        name: ds.name().into(),
        num_nodes: ds.num_nodes(),
        num_edges: ds.edges().len(),
        feature_dim: ds.feature_dim(),
        num_classes: ds.num_classes(),
        metric: ds.metric(),
        directed: ds.directed(),
        features: format,
        checksums,
        meta_sha256: String::new(),
    };
    meta.meta_sha256 = meta.self_digest()?;
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    write_file(&dir.join(META), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::fixtures::two_cliques;

    fn minimal() -> Dataset {
        let x = Matrix::from_vec(3, 2, vec![1.0, 0.0, 0.5, -0.25, 0.0, 3.0]).unwrap();
        Dataset::new(
            "minimal",
            vec![(0, 1), (1, 2)],
            x,
            vec![0, 1, 1],
            2,
            Metric::Accuracy,
            false,
            Split {
                train: vec![0],
                val: vec![1],
                test: vec![2],
            },
        )
        .unwrap()
    }

    #[test]
    fn round_trip_all_formats() {
        for fmt in [FeatureFormat::Bin, FeatureFormat::BinGz, FeatureFormat::Tsv] {
            let dir = tempfile::tempdir().unwrap();
            let ds = two_cliques();
            write_dataset_with(&ds, dir.path(), fmt).unwrap();
            assert_eq!(load_dataset(dir.path()).unwrap(), ds, "{fmt:?}");
        }
    }

    #[test]
    fn minimal_fixture_fields() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&minimal(), dir.path()).unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.num_nodes(), 3);
        assert_eq!(ds.edges(), &[(0, 1), (1, 2)]);
        assert_eq!(ds.labels(), &[0, 1, 1]);
        assert_eq!(ds.features().get(1, 1), -0.25);
        assert_eq!(fs::read_to_string(dir.path().join("split_val.idx")).unwrap(), "1\n");
    }

    #[test]
    fn empty_edge_set_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let ds = minimal();
        let empty = Dataset::new(
            "e",
            vec![],
            ds.features().clone(),
            ds.labels().to_vec(),
            2,
            Metric::Accuracy,
            false,
            ds.split().clone(),
        )
        .unwrap();
        write_dataset(&empty, dir.path()).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join(EDGES)).unwrap(), "u\tv\n");
        assert_eq!(load_dataset(dir.path()).unwrap(), empty);
    }

    #[test]
    fn binary_features_keep_bit_patterns() {
        let vals = vec![f32::MIN_POSITIVE, -0.0, 1.0e-45, 3.4028235e38, 0.1, -7.25];
        let x = Matrix::from_vec(3, 2, vals.clone()).unwrap();
        let ds = Dataset::new(
            "bits",
            vec![],
            x,
            vec![0, 1, 0],
            2,
            Metric::Accuracy,
            true,
            Split {
                train: vec![0],
                val: vec![1],
                test: vec![2],
            },
        )
        .unwrap();
        for fmt in [FeatureFormat::Bin, FeatureFormat::Tsv] {
            let dir = tempfile::tempdir().unwrap();
            write_dataset_with(&ds, dir.path(), fmt).unwrap();
            let back = load_dataset(dir.path()).unwrap();
            let bits: Vec<u32> = back.features().as_slice().iter().map(|v| v.to_bits()).collect();
            let want: Vec<u32> = vals.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits, want, "{fmt:?}");
        }
    }

    /// Rewrites a data file and fixes its checksum so the structural
    /// validation (not the hash) is what rejects it.
    fn tamper(dir: &Path, name: &str, contents: &[u8]) {
        fs::write(dir.join(name), contents).unwrap();
        let meta_path = dir.join(META);
        let mut meta: Meta = serde_json::from_slice(&fs::read(&meta_path).unwrap()).unwrap();
        meta.checksums.insert(name.into(), sha256_hex(contents));
        meta.meta_sha256 = meta.self_digest().unwrap();
        fs::write(&meta_path, serde_json::to_string_pretty(&meta).unwrap()).unwrap();
    }

    #[test]
    fn diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset_with(&minimal(), dir.path(), FeatureFormat::Tsv).unwrap();

        tamper(dir.path(), "features.tsv", b"1\t0\n0.5\t-0.25\n");
        match load_dataset(dir.path()) {
            Err(Error::Dimension {
                expected: 3, found: 2, ..
            }) => {}
            other => panic!("{other:?}"),
        }

        write_dataset_with(&minimal(), dir.path(), FeatureFormat::Tsv).unwrap();
        tamper(dir.path(), EDGES, b"u\tv\n0\t1\n1\tx\n");
        match load_dataset(dir.path()) {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("{other:?}"),
        }

        write_dataset_with(&minimal(), dir.path(), FeatureFormat::Tsv).unwrap();
        tamper(dir.path(), LABELS, b"0\n5\n1\n");
        assert!(matches!(load_dataset(dir.path()), Err(Error::Input(_))));

        write_dataset_with(&minimal(), dir.path(), FeatureFormat::Tsv).unwrap();
        fs::remove_file(dir.path().join(LABELS)).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Io { .. })));
    }

    #[test]
    fn any_single_byte_corruption_is_rejected() {
        let src = tempfile::tempdir().unwrap();
        let ds = two_cliques();
        write_dataset_with(&ds, src.path(), FeatureFormat::BinGz).unwrap();
        let mut names: Vec<String> = fs::read_dir(src.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        for name in names {
            let original = fs::read(src.path().join(&name)).unwrap();
            for pos in (0..original.len()).step_by(7) {
                for flip in [0x01u8, 0x80] {
                    let mut bytes = original.clone();
                    bytes[pos] ^= flip;
                    fs::write(src.path().join(&name), &bytes).unwrap();
                    if let Ok(got) = load_dataset(src.path()) {
                        assert_eq!(got, ds, "{name} byte {pos} silently changed the bundle");
                    }
                }
            }
            fs::write(src.path().join(&name), &original).unwrap();
        }
    }
}
