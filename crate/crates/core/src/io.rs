//! Dataset ingestion, snapshots and text exports.
//!
//! Binary snapshots are little-endian throughout:
//!
//! graph (`POGCNPOG`): magic, `u32` version, `u64` M, `u64` N, `f64` tau,
//! `u64` edge count, then per edge `u32` user, `u32` item, `u64` combination
//! bitmask, `u32` rank, `f64` weight.
//!
//! embeddings (`POGCNEMB`): magic, `u32` version, `u64` M, `u64` N, `u32` d,
//! `u32` L, `f64` tau, then `M * d` user values and `N * d` item values as
//! row-major `f32`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::data::{Dataset, InteractionLog, Remap};
use crate::error::Error;
use crate::graph::{Edge, PogGraph};
use crate::model::{Matrix, PropagatedEmbeddings};
use crate::order::{Combination, CombinationRank};

pub const GRAPH_MAGIC: &[u8; 8] = b"POGCNPOG";
pub const EMBEDDING_MAGIC: &[u8; 8] = b"POGCNEMB";
pub const FORMAT_VERSION: u32 = 1;

/// Rows of one behavior file before id mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawLog {
    pub behavior: String,
    pub rows: Vec<(String, String, Option<i64>)>,
}

/// Parses `user<TAB>item[<TAB>timestamp]` lines. Blank lines are skipped.
pub fn parse_tsv<R: BufRead>(reader: R, behavior: &str, header: bool, path: &Path) -> Result<RawLog, Error> {
    let mut rows = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if (header && n == 0) || line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.to_path_buf(), line: n + 1, message };
        let fields: Vec<&str> = line.trim_end_matches('\r').split('\t').collect();
        if fields.len() < 2 || fields.len() > 3 {
            return Err(parse_err(format!("expected 2 or 3 tab-separated fields, got {}", fields.len())));
        }
        let (user, item) = (fields[0].trim(), fields[1].trim());
        if user.is_empty() || item.is_empty() {
            return Err(parse_err("empty user or item id".into()));
        }
        let ts = match fields.get(2) {
            Some(t) => Some(t.trim().parse::<i64>().map_err(|e| parse_err(format!("bad timestamp `{t}`: {e}")))?),
            None => None,
        };
        rows.push((user.to_string(), item.to_string(), ts));
    }
    Ok(RawLog { behavior: behavior.to_string(), rows })
}

pub fn read_tsv(path: &Path, behavior: &str, header: bool) -> Result<RawLog, Error> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tsv(BufReader::new(file), behavior, header, path)
}

/// A dataset together with the external ids of its users and items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
}

impl LoadedData {
    /// Assigns contiguous indices to ids in sorted order (numeric when every
    /// id is an integer).
    pub fn from_raw(raw: Vec<RawLog>) -> Result<Self, Error> {
        let user_ids = sorted_ids(raw.iter().flat_map(|l| l.rows.iter().map(|r| r.0.as_str())));
        let item_ids = sorted_ids(raw.iter().flat_map(|l| l.rows.iter().map(|r| r.1.as_str())));
        let uix: HashMap<&str, u32> = user_ids.iter().enumerate().map(|(k, s)| (s.as_str(), k as u32)).collect();
        let iix: HashMap<&str, u32> = item_ids.iter().enumerate().map(|(k, s)| (s.as_str(), k as u32)).collect();
        let logs = raw
            .iter()
            .map(|l| {
                let pairs = l.rows.iter().map(|r| (uix[r.0.as_str()], iix[r.1.as_str()])).collect();
                let timestamps = if !l.rows.is_empty() && l.rows.iter().all(|r| r.2.is_some()) {
                    Some(l.rows.iter().map(|r| r.2.expect("checked")).collect())
                } else {
                    None
                };
                InteractionLog { behavior: l.behavior.clone(), pairs, timestamps }
            })
            .collect();
        let dataset = Dataset::new(user_ids.len(), item_ids.len(), logs)?;
        Ok(LoadedData { dataset, user_ids, item_ids })
    }

    pub fn remapped(&self, dataset: Dataset, remap: &Remap) -> Self {
        let pick = |ids: &[String], kept: Vec<u32>| kept.into_iter().map(|k| ids[k as usize].clone()).collect();
        LoadedData {
            dataset,
            user_ids: pick(&self.user_ids, remap.kept_users()),
            item_ids: pick(&self.item_ids, remap.kept_items()),
        }
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        if self.user_ids.iter().all(|s| s.parse::<u64>().is_ok()) {
            let key = id.parse::<u64>().ok()?;
            self.user_ids.binary_search_by_key(&key, |s| s.parse::<u64>().expect("numeric")).ok()
        } else {
            self.user_ids.binary_search_by(|s| s.as_str().cmp(id)).ok()
        }
    }
}

fn sorted_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut ids: Vec<&str> = ids.collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.iter().all(|s| s.parse::<u64>().is_ok()) {
        ids.sort_by_key(|s| s.parse::<u64>().expect("numeric"));
    }
    ids.into_iter().map(str::to_string).collect()
}

/// Loads one file per behavior.
pub fn load_behavior_files(files: &BTreeMap<String, String>, header: bool) -> Result<LoadedData, Error> {
    let raw = files
        .iter()
        .map(|(behavior, path)| read_tsv(Path::new(path), behavior, header))
        .collect::<Result<Vec<_>, _>>()?;
    LoadedData::from_raw(raw)
}

/// Writes one `user<TAB>item[<TAB>timestamp]` file per behavior into `dir`
/// and returns the behavior-to-path map.
pub fn write_dataset_tsv(dir: &Path, data: &Dataset) -> Result<BTreeMap<String, String>, Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = BTreeMap::new();
    for log in &data.logs {
        let path = dir.join(format!("{}.tsv", log.behavior));
        let mut w = create(&path)?;
        for (k, (u, i)) in log.pairs.iter().enumerate() {
            let line = match &log.timestamps {
                Some(ts) => format!("{u}\t{i}\t{}\n", ts[k]),
                None => format!("{u}\t{i}\n"),
            };
            w.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.insert(log.behavior.clone(), path.to_string_lossy().into_owned());
    }
    Ok(files)
}

fn create(path: &Path) -> Result<BufWriter<File>, Error> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

struct ByteReader<'a> {
    path: &'a Path,
    buf: Vec<u8>,
    pos: usize,
}

impl ByteReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], Error> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Snapshot { path: self.path.to_path_buf(), message: "truncated file".into() });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, Error> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, Error> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, Error> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self) -> Result<f32, Error> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn header(&mut self, magic: &[u8; 8]) -> Result<(), Error> {
        if self.take(8)? != magic {
            return Err(Error::Snapshot { path: self.path.to_path_buf(), message: "bad magic bytes".into() });
        }
        let version = self.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Snapshot {
                path: self.path.to_path_buf(),
                message: format!("unsupported format version {version}"),
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<(), Error> {
        if self.pos != self.buf.len() {
            return Err(Error::Snapshot { path: self.path.to_path_buf(), message: "trailing bytes".into() });
        }
        Ok(())
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>, Error> {
    let mut buf = Vec::new();
    File::open(path).and_then(|mut f| f.read_to_end(&mut buf)).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

pub fn encode_graph(g: &PogGraph) -> Vec<u8> {
    let mut out = Vec::with_capacity(44 + g.n_edges() * 28);
    out.extend_from_slice(GRAPH_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(g.n_users() as u64).to_le_bytes());
    out.extend_from_slice(&(g.n_items() as u64).to_le_bytes());
    out.extend_from_slice(&g.tau().to_le_bytes());
    out.extend_from_slice(&(g.n_edges() as u64).to_le_bytes());
    for e in g.edges() {
        out.extend_from_slice(&e.user.to_le_bytes());
        out.extend_from_slice(&e.item.to_le_bytes());
        out.extend_from_slice(&e.combination.0.to_le_bytes());
        out.extend_from_slice(&e.rank.to_le_bytes());
        out.extend_from_slice(&e.weight.to_le_bytes());
    }
    out
}

pub fn write_graph(path: &Path, g: &PogGraph) -> Result<(), Error> {
    let mut w = create(path)?;
    w.write_all(&encode_graph(g)).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn decode_graph(path: &Path, buf: Vec<u8>) -> Result<PogGraph, Error> {
    let mut r = ByteReader { path, buf, pos: 0 };
    r.header(GRAPH_MAGIC)?;
    let n_users = r.u64()? as usize;
    let n_items = r.u64()? as usize;
    let tau = r.f64()?;
    let n_edges = r.u64()? as usize;
    let mut edges = Vec::with_capacity(n_edges.min(r.buf.len() / 28));
    for _ in 0..n_edges {
        let user = r.u32()?;
        let item = r.u32()?;
        let combination = Combination(r.u64()?);
        let rank = r.u32()?;
        let weight = r.f64()?;
        edges.push(Edge { user, item, combination, rank, weight });
    }
    r.finish()?;
    Ok(PogGraph::from_edges(n_users, n_items, tau, edges)?)
}

pub fn read_graph(path: &Path) -> Result<PogGraph, Error> {
    decode_graph(path, read_all(path)?)
}

/// Propagated embeddings as stored in a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSnapshot {
    pub layers: u32,
    pub tau: f64,
    pub embeddings: PropagatedEmbeddings,
}

pub fn encode_embeddings(snap: &EmbeddingSnapshot) -> Vec<u8> {
    let e = &snap.embeddings;
    let mut out = Vec::with_capacity(44 + 4 * (e.users.as_slice().len() + e.items.as_slice().len()));
    out.extend_from_slice(EMBEDDING_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(e.n_users() as u64).to_le_bytes());
    out.extend_from_slice(&(e.n_items() as u64).to_le_bytes());
    out.extend_from_slice(&(e.users.dim() as u32).to_le_bytes());
    out.extend_from_slice(&snap.layers.to_le_bytes());
    out.extend_from_slice(&snap.tau.to_le_bytes());
    for &x in e.users.as_slice().iter().chain(e.items.as_slice()) {
        out.extend_from_slice(&(x as f32).to_le_bytes());
    }
    out
}

pub fn write_embeddings(path: &Path, snap: &EmbeddingSnapshot) -> Result<(), Error> {
    let mut w = create(path)?;
    w.write_all(&encode_embeddings(snap)).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn decode_embeddings(path: &Path, buf: Vec<u8>) -> Result<EmbeddingSnapshot, Error> {
    let mut r = ByteReader { path, buf, pos: 0 };
    r.header(EMBEDDING_MAGIC)?;
    let m = r.u64()? as usize;
    let n = r.u64()? as usize;
    let d = r.u32()? as usize;
    let layers = r.u32()?;
    let tau = r.f64()?;
    let expected = (m + n).checked_mul(d).and_then(|x| x.checked_mul(4));
    if expected != Some(r.buf.len() - r.pos) {
        return Err(Error::Snapshot { path: path.to_path_buf(), message: "payload size does not match header".into() });
    }
    let mut read = |rows: usize| -> Result<Matrix, Error> {
        let data = (0..rows * d).map(|_| r.f32().map(f64::from)).collect::<Result<Vec<_>, _>>()?;
        Ok(Matrix::from_vec(rows, d, data))
    };
    let users = read(m)?;
    let items = read(n)?;
    r.finish()?;
    Ok(EmbeddingSnapshot { layers, tau, embeddings: PropagatedEmbeddings { users, items } })
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingSnapshot, Error> {
    decode_embeddings(path, read_all(path)?)
}

/// `u<TAB>i<TAB>weight` per edge.
pub fn edge_list_tsv(g: &PogGraph) -> String {
    g.edges().iter().map(|e| format!("{}\t{}\t{}\n", e.user, e.item, e.weight)).collect()
}

/// `combination<TAB>rank<TAB>weight` per ranked combination, ascending rank.
pub fn rank_table_tsv(ranks: &CombinationRank, tau: f64) -> String {
    let mut out = String::from("combination\trank\tweight\n");
    for (r, class) in ranks.classes().iter().enumerate() {
        let rank = r as u32 + 1;
        for &c in class {
            out.push_str(&format!(
                "{}\t{}\t{}\n",
                ranks.order().display(c),
                rank,
                crate::graph::edge_weight(rank, tau)
            ));
        }
    }
    out
}

/// `id<TAB>v1,...,vd` per row.
pub fn embedding_tsv(ids: &[String], m: &Matrix) -> String {
    let mut out = String::new();
    for (r, id) in ids.iter().enumerate().take(m.rows()) {
        let values: Vec<String> = m.row(r).iter().map(|x| (*x as f32).to_string()).collect();
        out.push_str(&format!("{id}\t{}\n", values.join(",")));
    }
    out
}

/// Append-only `config_hash<TAB>report<TAB>checkpoint` registry.
#[derive(Debug, Clone)]
pub struct Manifest {
    path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub hash: String,
    pub report: String,
    pub checkpoint: String,
}

impl Manifest {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Manifest { path: path.into() }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn entries(&self) -> Result<Vec<ManifestEntry>, Error> {
        let text = match std::fs::read_to_string(&self.path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(vec![]),
            Err(e) => return Err(Error::io(&self.path, e)),
        };
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(n, l)| {
                let f: Vec<&str> = l.split('\t').collect();
                if f.len() != 3 {
                    return Err(Error::Parse {
                        path: self.path.clone(),
                        line: n + 1,
                        message: "expected 3 fields".into(),
                    });
                }
                Ok(ManifestEntry { hash: f[0].into(), report: f[1].into(), checkpoint: f[2].into() })
            })
            .collect()
    }

    /// Appends unless the hash is already registered; returns whether a line
    /// was written. Non-empty paths must exist.
    pub fn register(&self, entry: &ManifestEntry) -> Result<bool, Error> {
        if self.entries()?.iter().any(|e| e.hash == entry.hash) {
            log::info!("config {} already in manifest", entry.hash);
            return Ok(false);
        }
        for p in [&entry.report, &entry.checkpoint] {
            if !p.is_empty() && !Path::new(p).exists() {
                return Err(Error::FileNotFound(PathBuf::from(p)));
            }
        }
        if let Some(parent) = self.path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f =
            OpenOptions::new().create(true).append(true).open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "{}\t{}\t{}", entry.hash, entry.report, entry.checkpoint).map_err(|e| Error::io(&self.path, e))?;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::CombinationGraph;
    use crate::order::BehaviorOrder;

    #[test]
    fn parses_rows_and_reports_line_numbers() {
        let text = "u1\ti1\n\nu2\ti2\t17\n";
        let raw = parse_tsv(text.as_bytes(), "click", false, Path::new("x.tsv")).unwrap();
        assert_eq!(raw.rows, vec![("u1".into(), "i1".into(), None), ("u2".into(), "i2".into(), Some(17))]);

        let err = parse_tsv("1\t2\nabc\n".as_bytes(), "click", false, Path::new("x.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_tsv("1\t2\tnope\n".as_bytes(), "click", false, Path::new("x.tsv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));

        let raw = parse_tsv("user\titem\n1\t2\n".as_bytes(), "click", true, Path::new("x.tsv")).unwrap();
        assert_eq!(raw.rows.len(), 1);
    }

    #[test]
    fn ids_sort_numerically() {
        let raw = vec![RawLog {
            behavior: "click".into(),
            rows: vec![("10".into(), "b".into(), None), ("9".into(), "a".into(), None)],
        }];
        let loaded = LoadedData::from_raw(raw).unwrap();
        assert_eq!(loaded.user_ids, vec!["9", "10"]);
        assert_eq!(loaded.dataset.logs[0].pairs, vec![(1, 1), (0, 0)]);
        assert_eq!(loaded.user_index("10"), Some(1));
        assert_eq!(loaded.user_index("11"), None);
    }

    #[test]
    fn missing_file() {
        let err = read_tsv(Path::new("/nonexistent/click.tsv"), "click", false).unwrap_err();
        assert!(matches!(err, Error::FileNotFound(_)));
    }

    fn sample_graph() -> PogGraph {
        let order = BehaviorOrder::new(&[vec!["click"], vec!["buy"]]).unwrap();
        let data = Dataset::new(
            3,
            4,
            vec![
                InteractionLog::new("click", vec![(0, 0), (0, 3), (2, 1)]),
                InteractionLog::new("buy", vec![(0, 3), (1, 2)]),
            ],
        )
        .unwrap();
        let cg = CombinationGraph::from_dataset(&order, &data).unwrap();
        PogGraph::build(&cg, &CombinationRank::over_all_subsets(&order).unwrap(), 1.7).unwrap()
    }

    #[test]
    fn graph_snapshot_round_trip() {
        let g = sample_graph();
        let back = decode_graph(Path::new("g"), encode_graph(&g)).unwrap();
        assert_eq!(back, g);

        let mut bad = encode_graph(&g);
        bad[0] = b'X';
        assert!(matches!(decode_graph(Path::new("g"), bad), Err(Error::Snapshot { .. })));
        let mut short = encode_graph(&g);
        short.pop();
        assert!(matches!(decode_graph(Path::new("g"), short), Err(Error::Snapshot { .. })));
    }

    #[test]
    fn embedding_snapshot_layout() {
        let snap = EmbeddingSnapshot {
            layers: 2,
            tau: 0.5,
            embeddings: PropagatedEmbeddings {
                users: Matrix::from_vec(1, 2, vec![1.0, -2.0]),
                items: Matrix::from_vec(2, 2, vec![0.5, 0.25, 3.0, 4.0]),
            },
        };
        let bytes = encode_embeddings(&snap);
        assert_eq!(&bytes[..8], EMBEDDING_MAGIC);
        assert_eq!(bytes.len(), 8 + 4 + 8 + 8 + 4 + 4 + 8 + 6 * 4);
        assert_eq!(&bytes[44..48], &1.0f32.to_le_bytes());
        assert_eq!(decode_embeddings(Path::new("e"), bytes).unwrap(), snap);
    }

    #[test]
    fn text_exports() {
        let g = sample_graph();
        let edges = edge_list_tsv(&g);
        assert_eq!(edges.lines().count(), 4);
        assert!(edges.starts_with("0\t0\t1\n"));
        let order = BehaviorOrder::new(&[vec!["click"], vec!["buy"]]).unwrap();
        let table = rank_table_tsv(&CombinationRank::over_all_subsets(&order).unwrap(), 1.0);
        assert_eq!(table, "combination\trank\tweight\nclick\t1\t1\nbuy\t2\t2\nclick+buy\t3\t3\n");
        let m = Matrix::from_vec(1, 2, vec![0.5, -1.0]);
        assert_eq!(embedding_tsv(&["u7".into()], &m), "u7\t0.5,-1\n");
    }

    #[test]
    fn manifest_appends_unique_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let ckpt = dir.path().join("c.emb");
        std::fs::write(&ckpt, b"x").unwrap();
        let m = Manifest::new(dir.path().join("manifest.tsv"));
        let entry =
            ManifestEntry { hash: "ab".into(), report: String::new(), checkpoint: ckpt.to_string_lossy().into() };
        assert!(m.register(&entry).unwrap());
        assert!(!m.register(&entry).unwrap());
        assert_eq!(m.entries().unwrap(), vec![entry]);
        let missing = ManifestEntry { hash: "cd".into(), report: "/nope".into(), checkpoint: String::new() };
        assert!(matches!(m.register(&missing), Err(Error::FileNotFound(_))));
    }
}
