//! Converters from common public layouts into [`Dataset`].
//!
//! * `tsv`: a directory with `edges.tsv`, `features.tsv`, `labels.tsv` and
//!   the three `split_*.idx` files, i.e. NGDF text files without `meta.json`.
//! * `linqs`: the `<name>.content` / `<name>.cites` pair used by the LINQS
//!   citation datasets. Content rows are `id<TAB>f1 ... fd<TAB>class`, cite
//!   rows are `cited<TAB>citing`. Nodes keep content-file order and classes
//!   are numbered by sorted class name. No split is included, so one has to
//!   be generated.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use super::ngdf::{edges_text, features_tsv_text, parse_edges, parse_features_tsv, parse_indices, parse_labels};
use super::{Dataset, Split};
use crate::error::{Error, Result};
use crate::tensor::Matrix;
use crate::train::Metric;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads the text layout. `num_classes` defaults to `max label + 1`.
pub fn from_tsv_dir(
    dir: impl AsRef<Path>,
    name: &str,
    metric: Metric,
    num_classes: Option<usize>,
    directed: bool,
) -> Result<Dataset> {
    let dir = dir.as_ref();
    let fpath = dir.join("features.tsv");
    let features = parse_features_tsv(&fpath, &read_text(&fpath)?)?;
    let n = features.rows();
    let epath = dir.join("edges.tsv");
    let edges = parse_edges(&epath, &read_text(&epath)?, n)?;
    let lpath = dir.join("labels.tsv");
    let labels = parse_labels(&lpath, &read_text(&lpath)?)?;
    let mut parts = Vec::new();
    for part in ["train", "val", "test"] {
        let p = dir.join(format!("split_{part}.idx"));
        parts.push(parse_indices(&p, &read_text(&p)?, n)?);
    }
    let classes = num_classes.unwrap_or_else(|| labels.iter().copied().max().map_or(0, |m| (m + 1).max(0) as usize));
    let test = parts.pop().unwrap();
    let val = parts.pop().unwrap();
    let train = parts.pop().unwrap();
    Dataset::new(
        name,
        edges,
        features,
        labels,
        classes,
        metric,
        directed,
        Split { train, val, test },
    )
}

/// Writes the text layout (no `meta.json`).
pub fn to_tsv_dir(ds: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let list = |v: &[usize]| v.iter().map(|i| format!("{i}\n")).collect::<String>();
    let files = [
        ("edges.tsv", edges_text(ds.edges())),
        ("features.tsv", features_tsv_text(ds.features())),
        ("labels.tsv", ds.labels().iter().map(|y| format!("{y}\n")).collect()),
        ("split_train.idx", list(&ds.split().train)),
        ("split_val.idx", list(&ds.split().val)),
        ("split_test.idx", list(&ds.split().test)),
    ];
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Parsed LINQS graph before a split is attached.
#[derive(Debug, Clone)]
pub struct RawGraph {
    pub node_ids: Vec<String>,
    pub class_names: Vec<String>,
    /// Undirected edges with `u < v`, sorted, self-citations removed.
    pub edges: Vec<(usize, usize)>,
    pub features: Matrix<f32>,
    pub labels: Vec<i64>,
    /// Cite rows naming a paper absent from the content file.
    pub dangling_cites: usize,
}

pub fn read_linqs(content: impl AsRef<Path>, cites: impl AsRef<Path>) -> Result<RawGraph> {
    let (content, cites) = (content.as_ref(), cites.as_ref());
    let text = read_text(content)?;
    let mut ids = Vec::new();
    let mut raw_classes = Vec::new();
    let mut data = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        let perr = |msg: String| Error::Parse {
            path: content.to_path_buf(),
            line: i + 1,
            msg,
        };
        if toks.len() < 3 {
            return Err(perr("expected id, features, class".into()));
        }
        let d = toks.len() - 2;
        if *dim.get_or_insert(d) != d {
            return Err(perr(format!(
                "row has {d} features, previous rows have {}",
                dim.unwrap()
            )));
        }
        for t in &toks[1..toks.len() - 1] {
            let v: f32 = t.parse().map_err(|_| perr(format!("bad feature value '{t}'")))?;
            data.push(v);
        }
        ids.push(toks[0].to_string());
        raw_classes.push(toks[toks.len() - 1].to_string());
    }
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    if index.len() != ids.len() {
        return Err(Error::input(format!("duplicate paper ids in {}", content.display())));
    }
    let class_names: Vec<String> = raw_classes
        .iter()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels = raw_classes
        .iter()
        .map(|c| class_names.binary_search(c).unwrap() as i64)
        .collect();

    let mut edges = BTreeSet::new();
    let mut dangling = 0;
    for (i, line) in read_text(cites)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 2 {
            return Err(Error::Parse {
                path: cites.to_path_buf(),
                line: i + 1,
                msg: "expected two paper ids".into(),
            });
        }
        match (index.get(toks[0]), index.get(toks[1])) {
            (Some(&a), Some(&b)) if a != b => {
                edges.insert((a.min(b), a.max(b)));
            }
            (Some(_), Some(_)) => {}
            _ => dangling += 1,
        }
    }
    let n = ids.len();
    Ok(RawGraph {
        node_ids: ids,
        class_names,
        edges: edges.into_iter().collect(),
        features: Matrix::from_vec(n, dim.unwrap_or(0), data)?,
        labels,
        dangling_cites: dangling,
    })
}

impl RawGraph {
    pub fn into_dataset(self, name: &str, split: Split) -> Result<Dataset> {
        let classes = self.class_names.len();
        Dataset::new(
            name,
            self.edges,
            self.features,
            self.labels,
            classes,
            Metric::Accuracy,
            false,
            split,
        )
    }
}
