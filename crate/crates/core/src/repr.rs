//! Document poolers, layer selection, hierarchical averaging and the
//! embedding-table JSONL exchange format.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, InstanceId, Level};
use crate::error::{Error, Result};
use crate::hulm::BlockMode;
use crate::toylm::{HiddenStates, SpecialIds};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pooler {
    #[serde(rename = "CLS")]
    Cls,
    #[serde(rename = "AT")]
    At,
    #[serde(rename = "LT")]
    Lt,
    #[serde(rename = "LT_INSEP")]
    LtInsep,
    #[serde(rename = "U")]
    U,
}

impl Pooler {
    pub const ALL: [Pooler; 5] = [
        Pooler::Cls,
        Pooler::At,
        Pooler::Lt,
        Pooler::LtInsep,
        Pooler::U,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Pooler::Cls => "CLS",
            Pooler::At => "AT",
            Pooler::Lt => "LT",
            Pooler::LtInsep => "LT_INSEP",
            Pooler::U => "U",
        }
    }

    pub fn parse(s: &str) -> Result<Pooler> {
        Pooler::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown pooler `{s}`")))
    }
}

impl std::fmt::Display for Pooler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerChoice {
    #[serde(rename = "L")]
    Last,
    #[serde(rename = "SL")]
    SecondToLast,
}

impl LayerChoice {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerChoice::Last => "L",
            LayerChoice::SecondToLast => "SL",
        }
    }

    pub fn parse(s: &str) -> Result<LayerChoice> {
        match s {
            "L" => Ok(LayerChoice::Last),
            "SL" => Ok(LayerChoice::SecondToLast),
            other => Err(Error::InvalidSpec(format!("unknown layer `{other}`"))),
        }
    }

    /// Index into `HiddenStates::values` (0 is the embedding output).
    pub fn resolve(self, n_layers: usize) -> Result<usize> {
        match self {
            LayerChoice::Last if n_layers >= 1 => Ok(n_layers),
            LayerChoice::SecondToLast if n_layers >= 2 => Ok(n_layers - 1),
            _ => Err(Error::InvalidSpec(format!(
                "layer {} needs more than {n_layers} transformer layer(s)",
                self.as_str()
            ))),
        }
    }
}

/// The kind of model a representation is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    MaskedEncoder,
    Autoregressive,
    Hulm(BlockMode),
}

/// Whether `pooler` can be drawn from `kind` at `level`.
pub fn compatible(pooler: Pooler, kind: ModelKind, level: Level) -> bool {
    match pooler {
        Pooler::Cls => kind == ModelKind::MaskedEncoder,
        Pooler::At => true,
        Pooler::Lt => matches!(kind, ModelKind::Autoregressive | ModelKind::Hulm(_)),
        Pooler::LtInsep => matches!(kind, ModelKind::Hulm(_)),
        Pooler::U => match kind {
            ModelKind::Hulm(BlockMode::OneDocPerBlock) => true,
            ModelKind::Hulm(BlockMode::ConcatBlocks) => level != Level::Document,
            _ => false,
        },
    }
}

/// AT reads the second-to-last layer; every other pooler the last.
pub fn layer_policy_default(pooler: Pooler, _kind: ModelKind) -> LayerChoice {
    match pooler {
        Pooler::At => LayerChoice::SecondToLast,
        _ => LayerChoice::Last,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ReprSpec {
    pub model_tag: String,
    pub pooler: Pooler,
    pub layer: LayerChoice,
    pub level: Level,
}

impl ReprSpec {
    pub fn check(&self, kind: ModelKind) -> Result<()> {
        if compatible(self.pooler, kind, self.level) {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!(
                "pooler {} is not available from `{}` ({kind:?}) at {} level",
                self.pooler, self.model_tag, self.level
            )))
        }
    }

    /// Short column label such as `AT-SL`.
    pub fn label(&self) -> String {
        format!("{}-{}", self.pooler, self.layer.as_str())
    }

    pub fn at_level(&self, level: Level) -> ReprSpec {
        ReprSpec {
            level,
            ..self.clone()
        }
    }
}

/// Token ids left out of AT averages and skipped when locating LT.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoolOptions {
    pub excluded: BTreeSet<u32>,
}

impl Default for PoolOptions {
    fn default() -> Self {
        let s = SpecialIds::DEFAULT;
        PoolOptions {
            excluded: [s.pad, s.cls, s.sep, s.bos, s.insep].into_iter().collect(),
        }
    }
}

impl PoolOptions {
    fn is_content(&self, h: &HiddenStates, pos: usize) -> bool {
        h.attention_mask[pos] && !self.excluded.contains(&h.token_ids[pos])
    }
}

/// Pools one document's hidden states into a vector at the chosen layer.
pub fn pool_document(
    h: &HiddenStates,
    pooler: Pooler,
    layer: LayerChoice,
    insep_position: Option<usize>,
    opts: &PoolOptions,
) -> Result<Vec<f64>> {
    let l = layer.resolve(h.n_layers())?;
    let content = || (0..h.seq_len()).filter(|&p| opts.is_content(h, p));
    match pooler {
        Pooler::Cls => {
            if h.seq_len() == 0 {
                return Err(Error::Data("empty document".into()));
            }
            Ok(h.state(l, 0).to_vec())
        }
        Pooler::At => {
            let rows: Vec<&[f64]> = content().map(|p| h.state(l, p)).collect();
            if rows.is_empty() {
                return Err(Error::Data("document has no content tokens".into()));
            }
            Ok(mean_vectors(&rows))
        }
        Pooler::Lt => {
            let p = content()
                .next_back()
                .ok_or_else(|| Error::Data("document has no content tokens".into()))?;
            Ok(h.state(l, p).to_vec())
        }
        Pooler::LtInsep => {
            let p = insep_position
                .filter(|&p| p < h.seq_len())
                .ok_or_else(|| Error::Data("document has no closing INSEP".into()))?;
            Ok(h.state(l, p).to_vec())
        }
        Pooler::U => Err(Error::InvalidSpec(
            "U representations come from user states, not hidden states".into(),
        )),
    }
}

/// Coordinate-wise mean, offset from the first row so constant inputs are
/// reproduced exactly.
pub(crate) fn mean_vectors(rows: &[&[f64]]) -> Vec<f64> {
    let first = rows[0];
    let n = rows.len() as f64;
    (0..first.len())
        .map(|j| {
            let offset: f64 = rows[1..].iter().map(|r| r[j] - first[j]).sum();
            first[j] + offset / n
        })
        .collect()
}

/// Instance vectors of one representation at one level.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    /// `None` only for an empty table read from an empty file.
    pub spec: Option<ReprSpec>,
    entries: BTreeMap<InstanceId, Vec<f64>>,
    width: usize,
}

impl EmbeddingTable {
    pub fn new(spec: ReprSpec) -> EmbeddingTable {
        EmbeddingTable {
            spec: Some(spec),
            entries: BTreeMap::new(),
            width: 0,
        }
    }

    pub fn empty() -> EmbeddingTable {
        EmbeddingTable {
            spec: None,
            entries: BTreeMap::new(),
            width: 0,
        }
    }

    pub fn insert(&mut self, id: InstanceId, vector: Vec<f64>) -> Result<()> {
        if let Some(spec) = &self.spec {
            if id.level() != spec.level {
                return Err(Error::Data(format!("id `{id}` is not a {} id", spec.level)));
            }
        }
        if vector.is_empty() {
            return Err(Error::Data(format!("`{id}` has an empty vector")));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!("`{id}` has non-finite values")));
        }
        if !self.entries.is_empty() && vector.len() != self.width {
            return Err(Error::Data(format!(
                "`{id}` has width {}, expected {}",
                vector.len(),
                self.width
            )));
        }
        if self.entries.contains_key(&id) {
            return Err(Error::Data(format!("duplicate id `{id}`")));
        }
        self.width = vector.len();
        self.entries.insert(id, vector);
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &InstanceId) -> Option<&[f64]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&InstanceId, &[f64])> {
        self.entries.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn level(&self) -> Option<Level> {
        self.spec.as_ref().map(|s| s.level)
    }
}

/// How user vectors weigh a user's documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserVectorScheme {
    /// Every document counts once.
    #[default]
    FlatDocuments,
    /// Mean of the user's wave vectors.
    WaveThenUser,
}

/// Averages a document table up to wave or user level.
pub fn aggregate_hierarchical(
    doc_table: &EmbeddingTable,
    corpus: &Corpus,
    target: Level,
    scheme: UserVectorScheme,
) -> Result<EmbeddingTable> {
    let spec = doc_table
        .spec
        .as_ref()
        .filter(|s| s.level == Level::Document)
        .ok_or_else(|| {
            Error::InvalidSpec("hierarchical averaging needs a document table".into())
        })?;
    if target == Level::Document {
        return Err(Error::InvalidSpec("target must be wave or user".into()));
    }
    if doc_table.is_empty() {
        return Err(Error::Data("document table is empty".into()));
    }
    let mut by_wave: BTreeMap<(String, u32), Vec<&[f64]>> = BTreeMap::new();
    for (id, v) in doc_table.iter() {
        let InstanceId::Document(doc_id) = id else {
            unreachable!("document-level table")
        };
        let doc = corpus
            .document(doc_id)
            .ok_or_else(|| Error::Data(format!("document `{doc_id}` is not in the corpus")))?;
        by_wave
            .entry((doc.user_id.clone(), doc.wave_id))
            .or_default()
            .push(v);
    }
    let mut out = EmbeddingTable::new(spec.at_level(target));
    match (target, scheme) {
        (Level::Wave, _) => {
            for ((user_id, wave_id), rows) in by_wave {
                out.insert(InstanceId::Wave { user_id, wave_id }, mean_vectors(&rows))?;
            }
        }
        (_, UserVectorScheme::FlatDocuments) => {
            let mut by_user: BTreeMap<String, Vec<&[f64]>> = BTreeMap::new();
            for ((user_id, _), rows) in by_wave {
                by_user.entry(user_id).or_default().extend(rows);
            }
            for (user_id, rows) in by_user {
                out.insert(InstanceId::User(user_id), mean_vectors(&rows))?;
            }
        }
        (_, UserVectorScheme::WaveThenUser) => {
            let mut by_user: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
            for ((user_id, _), rows) in by_wave {
                by_user
                    .entry(user_id)
                    .or_default()
                    .push(mean_vectors(&rows));
            }
            for (user_id, waves) in by_user {
                let rows: Vec<&[f64]> = waves.iter().map(Vec::as_slice).collect();
                out.insert(InstanceId::User(user_id), mean_vectors(&rows))?;
            }
        }
    }
    Ok(out)
}

#[derive(Deserialize)]
struct EmbeddingLine {
    id: String,
    level: Level,
    model: String,
    pooler: Pooler,
    layer: LayerChoice,
    vector: Vec<f64>,
}

/// Writes one JSON object per entry; numbers carry 17 significant digits.
pub fn export_embeddings(t: &EmbeddingTable, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    if let Some(spec) = &t.spec {
        let head = format!(
            r#""level": {}, "model": {}, "pooler": "{}", "layer": "{}""#,
            serde_json::to_string(spec.level.as_str()).expect("string"),
            serde_json::to_string(&spec.model_tag).expect("string"),
            spec.pooler,
            spec.layer.as_str()
        );
        for (id, v) in t.iter() {
            let mut line = format!(
                r#"{{"id": {}, {head}, "vector": ["#,
                serde_json::to_string(&id.to_string()).expect("string")
            );
            for (i, x) in v.iter().enumerate() {
                if i > 0 {
                    line.push_str(", ");
                }
                write!(line, "{x:.16e}").expect("write to string");
            }
            line.push_str("]}\n");
            w.write_all(line.as_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn import_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut table = EmbeddingTable::empty();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let rec: EmbeddingLine =
            serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let spec = ReprSpec {
            model_tag: rec.model,
            pooler: rec.pooler,
            layer: rec.layer,
            level: rec.level,
        };
        match &table.spec {
            None => table.spec = Some(spec),
            Some(s) if *s != spec => {
                return Err(parse_err(format!(
                    "id `{}` belongs to a different representation",
                    rec.id
                )))
            }
            Some(_) => {}
        }
        let id = InstanceId::parse(rec.level, &rec.id).map_err(|e| parse_err(e.to_string()))?;
        table
            .insert(id, rec.vector)
            .map_err(|e| parse_err(e.to_string()))?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AggregationScheme, DocumentRecord};
    use crate::toylm::Mat;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn states(token_ids: Vec<u32>, rows: &[&[f64]]) -> HiddenStates {
        let d = rows[0].len();
        let m = Mat::from_vec(rows.len(), d, rows.concat());
        HiddenStates {
            values: vec![m.clone(), m.clone(), m],
            attention_mask: token_ids.iter().map(|&t| t != 0).collect(),
            token_ids,
        }
    }

    fn spec(level: Level) -> ReprSpec {
        ReprSpec {
            model_tag: "m".into(),
            pooler: Pooler::At,
            layer: LayerChoice::SecondToLast,
            level,
        }
    }

    fn opts() -> PoolOptions {
        PoolOptions::default()
    }

    #[test]
    fn average_of_two_tokens() {
        let h = states(vec![9, 10], &[&[1.0, 3.0], &[3.0, 5.0]]);
        assert_eq!(
            pool_document(&h, Pooler::At, LayerChoice::Last, None, &opts()).unwrap(),
            [2.0, 4.0]
        );
    }

    #[test]
    fn single_token_average_equals_last_token() {
        let h = states(vec![6, 9], &[&[0.0, 0.0], &[0.7, -0.2]]);
        let at = pool_document(&h, Pooler::At, LayerChoice::Last, None, &opts()).unwrap();
        let lt = pool_document(&h, Pooler::Lt, LayerChoice::Last, None, &opts()).unwrap();
        assert_eq!(at, [0.7, -0.2]);
        assert_eq!(at, lt);
    }

    #[test]
    fn trailing_pads_do_not_change_pooling() {
        let h = states(
            vec![2, 9, 10, 3],
            &[&[9.0, 9.0], &[1.0, 2.0], &[4.0, 8.0], &[9.0, 9.0]],
        );
        let padded = states(
            vec![2, 9, 10, 3, 0, 0],
            &[
                &[9.0, 9.0],
                &[1.0, 2.0],
                &[4.0, 8.0],
                &[9.0, 9.0],
                &[50.0, 50.0],
                &[7.0, 7.0],
            ],
        );
        for p in [Pooler::At, Pooler::Lt, Pooler::Cls] {
            assert_eq!(
                pool_document(&h, p, LayerChoice::Last, None, &opts()).unwrap(),
                pool_document(&padded, p, LayerChoice::Last, None, &opts()).unwrap()
            );
        }
        assert_eq!(
            pool_document(&padded, Pooler::Lt, LayerChoice::Last, None, &opts()).unwrap(),
            [4.0, 8.0]
        );
    }

    #[test]
    fn pooling_errors() {
        let h = states(vec![6, 5], &[&[1.0], &[2.0]]);
        assert!(pool_document(&h, Pooler::At, LayerChoice::Last, None, &opts()).is_err());
        assert!(pool_document(&h, Pooler::LtInsep, LayerChoice::Last, None, &opts()).is_err());
        assert_eq!(
            pool_document(&h, Pooler::LtInsep, LayerChoice::Last, Some(1), &opts()).unwrap(),
            [2.0]
        );
        let mut shallow = states(vec![9], &[&[1.0]]);
        shallow.values.truncate(2);
        assert!(pool_document(
            &shallow,
            Pooler::At,
            LayerChoice::SecondToLast,
            None,
            &opts()
        )
        .is_err());
    }

    #[test]
    fn default_layers() {
        assert_eq!(
            layer_policy_default(Pooler::At, ModelKind::MaskedEncoder),
            LayerChoice::SecondToLast
        );
        assert_eq!(
            layer_policy_default(Pooler::Cls, ModelKind::MaskedEncoder),
            LayerChoice::Last
        );
        assert_eq!(
            layer_policy_default(Pooler::At, ModelKind::Autoregressive),
            LayerChoice::SecondToLast
        );
        assert_eq!(
            layer_policy_default(Pooler::LtInsep, ModelKind::Hulm(BlockMode::ConcatBlocks)),
            LayerChoice::Last
        );
    }

    #[test]
    fn compatibility_matrix() {
        let kinds = [
            ModelKind::MaskedEncoder,
            ModelKind::Autoregressive,
            ModelKind::Hulm(BlockMode::ConcatBlocks),
            ModelKind::Hulm(BlockMode::OneDocPerBlock),
        ];
        // rows: CLS, AT, LT, LT_INSEP, U at document level
        let expected = [
            [true, false, false, false],
            [true, true, true, true],
            [false, true, true, true],
            [false, false, true, true],
            [false, false, false, true],
        ];
        for (p, row) in Pooler::ALL.iter().zip(expected) {
            for (k, ok) in kinds.iter().zip(row) {
                assert_eq!(compatible(*p, *k, Level::Document), ok, "{p} {k:?}");
            }
        }
        assert!(compatible(
            Pooler::U,
            ModelKind::Hulm(BlockMode::ConcatBlocks),
            Level::User
        ));
        assert!(compatible(
            Pooler::U,
            ModelKind::Hulm(BlockMode::ConcatBlocks),
            Level::Wave
        ));
    }

    fn corpus(docs: &[(&str, &str, u32)]) -> Corpus {
        let records = docs
            .iter()
            .enumerate()
            .map(|(i, (d, u, w))| DocumentRecord {
                doc_id: d.to_string(),
                user_id: u.to_string(),
                wave_id: *w,
                timestamp: chrono::Utc
                    .with_ymd_and_hms(2021, 3, 1 + i as u32, 0, 0, 0)
                    .unwrap(),
                text: "a b".into(),
                labels: [("valence".to_string(), 1.0)].into(),
            })
            .collect();
        Corpus::new(records, AggregationScheme::WaveThenUser).unwrap()
    }

    fn doc_table(rows: &[(&str, Vec<f64>)]) -> EmbeddingTable {
        let mut t = EmbeddingTable::new(spec(Level::Document));
        for (id, v) in rows {
            t.insert(InstanceId::Document(id.to_string()), v.clone())
                .unwrap();
        }
        t
    }

    #[test]
    fn user_vector_is_mean_of_documents() {
        let c = corpus(&[("a", "u", 1), ("b", "u", 2)]);
        let t = doc_table(&[("a", vec![0.0, 2.0]), ("b", vec![2.0, 0.0])]);
        let u =
            aggregate_hierarchical(&t, &c, Level::User, UserVectorScheme::FlatDocuments).unwrap();
        assert_eq!(u.get(&InstanceId::User("u".into())).unwrap(), [1.0, 1.0]);
    }

    #[test]
    fn one_doc_per_wave_rekeys() {
        let c = corpus(&[("a", "u", 1), ("b", "u", 2), ("c", "v", 1)]);
        let t = doc_table(&[("a", vec![0.1]), ("b", vec![0.2]), ("c", vec![0.3])]);
        let w =
            aggregate_hierarchical(&t, &c, Level::Wave, UserVectorScheme::FlatDocuments).unwrap();
        assert_eq!(w.len(), 3);
        for (d, u, wave) in [("a", "u", 1), ("b", "u", 2), ("c", "v", 1)] {
            assert_eq!(
                w.get(&InstanceId::Wave {
                    user_id: u.into(),
                    wave_id: wave
                }),
                t.get(&InstanceId::Document(d.into()))
            );
        }
    }

    #[test]
    fn documents_weigh_equally_not_waves() {
        let c = corpus(&[("a", "u", 1), ("b", "u", 1), ("c", "u", 1), ("d", "u", 2)]);
        let t = doc_table(&[
            ("a", vec![0.0]),
            ("b", vec![0.0]),
            ("c", vec![0.0]),
            ("d", vec![4.0]),
        ]);
        let flat =
            aggregate_hierarchical(&t, &c, Level::User, UserVectorScheme::FlatDocuments).unwrap();
        let waves =
            aggregate_hierarchical(&t, &c, Level::User, UserVectorScheme::WaveThenUser).unwrap();
        let id = InstanceId::User("u".into());
        // documents equally: 4/4 = 1; waves equally: (0 + 4)/2 = 2
        assert_eq!(flat.get(&id).unwrap(), [1.0]);
        assert_eq!(waves.get(&id).unwrap(), [2.0]);
    }

    #[test]
    fn aggregation_errors() {
        let c = corpus(&[("a", "u", 1)]);
        let t = doc_table(&[("zz", vec![1.0])]);
        assert!(
            aggregate_hierarchical(&t, &c, Level::User, UserVectorScheme::FlatDocuments).is_err()
        );
        let empty = EmbeddingTable::new(spec(Level::Document));
        assert!(
            aggregate_hierarchical(&empty, &c, Level::User, UserVectorScheme::FlatDocuments)
                .is_err()
        );
        let t = doc_table(&[("a", vec![1.0])]);
        assert!(
            aggregate_hierarchical(&t, &c, Level::Document, UserVectorScheme::FlatDocuments)
                .is_err()
        );
    }

    #[test]
    fn table_rejects_bad_entries() {
        let mut t = EmbeddingTable::new(spec(Level::Document));
        t.insert(InstanceId::Document("a".into()), vec![1.0, 2.0])
            .unwrap();
        assert!(t
            .insert(InstanceId::Document("b".into()), vec![1.0])
            .is_err());
        assert!(t
            .insert(InstanceId::Document("a".into()), vec![1.0, 2.0])
            .is_err());
        assert!(t
            .insert(InstanceId::Document("c".into()), vec![1.0, f64::NAN])
            .is_err());
        assert!(t
            .insert(InstanceId::User("u".into()), vec![1.0, 2.0])
            .is_err());
    }

    #[test]
    fn export_import_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let mut t = EmbeddingTable::new(spec(Level::Wave));
        t.insert(
            InstanceId::Wave {
                user_id: "u/1".into(),
                wave_id: 2,
            },
            vec![0.1, -1e-300, 1.0 / 3.0, 7e20],
        )
        .unwrap();
        t.insert(
            InstanceId::Wave {
                user_id: "v".into(),
                wave_id: 1,
            },
            vec![f64::MIN_POSITIVE, 0.0, -0.0, 2.5],
        )
        .unwrap();
        export_embeddings(&t, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 2);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["id"], "u/1/2");
        assert_eq!(first["layer"], "SL");
        assert_eq!(first["pooler"], "AT");
        assert_eq!(import_embeddings(&p).unwrap(), t);
    }

    #[test]
    fn empty_table_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        export_embeddings(&EmbeddingTable::empty(), &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "");
        assert_eq!(import_embeddings(&p).unwrap(), EmbeddingTable::empty());
    }

    #[test]
    fn ragged_file_names_offending_id() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        std::fs::write(
            &p,
            concat!(
                r#"{"id": "a", "level": "document", "model": "m", "pooler": "AT", "layer": "SL", "vector": [1, 2, 3]}"#,
                "\n",
                r#"{"id": "b", "level": "document", "model": "m", "pooler": "AT", "layer": "SL", "vector": [1, 2, 3, 4]}"#,
                "\n"
            ),
        )
        .unwrap();
        let err = import_embeddings(&p).unwrap_err().to_string();
        assert!(err.contains("`b`"), "{err}");
        assert!(err.contains(":2") || err.contains("line 2"), "{err}");
    }

    #[test]
    fn import_rejects_duplicates_mixed_specs_and_non_finite() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let line = |id: &str, pooler: &str, v: &str| {
            format!(
                r#"{{"id": "{id}", "level": "document", "model": "m", "pooler": "{pooler}", "layer": "L", "vector": {v}}}"#
            )
        };
        for body in [
            [line("a", "AT", "[1]"), line("a", "AT", "[2]")],
            [line("a", "AT", "[1]"), line("b", "LT", "[2]")],
            [line("a", "AT", "[1]"), line("b", "AT", "[1e999]")],
        ] {
            std::fs::write(&p, body.join("\n")).unwrap();
            assert!(import_embeddings(&p).is_err(), "{body:?}");
        }
    }

    fn arb_states() -> impl Strategy<Value = HiddenStates> {
        (1usize..4, 1usize..10, 1usize..6).prop_flat_map(|(layers, t, d)| {
            (
                prop::collection::vec(
                    prop::sample::select(vec![0u32, 2, 3, 5, 6, 7, 8, 9, 10, 11]),
                    t,
                ),
                prop::collection::vec(-10.0f64..10.0, (layers + 1) * t * d),
            )
                .prop_map(move |(ids, data)| HiddenStates {
                    values: data
                        .chunks(t * d)
                        .map(|c| Mat::from_vec(t, d, c.to_vec()))
                        .collect(),
                    attention_mask: ids.iter().map(|&i| i != 0).collect(),
                    token_ids: ids,
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn average_matches_coordinate_loop(h in arb_states()) {
            let o = opts();
            let l = h.n_layers();
            let got = pool_document(&h, Pooler::At, LayerChoice::Last, None, &o);
            let mut sum = vec![0.0; h.d_model()];
            let mut n = 0usize;
            for p in 0..h.seq_len() {
                if h.token_ids[p] == 0 || o.excluded.contains(&h.token_ids[p]) {
                    continue;
                }
                n += 1;
                for j in 0..h.d_model() {
                    sum[j] += h.values[l].at(p, j);
                }
            }
            if n == 0 {
                prop_assert!(got.is_err());
            } else {
                let got = got.unwrap();
                for j in 0..h.d_model() {
                    prop_assert!((got[j] - sum[j] / n as f64).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn aggregation_ignores_enumeration_order(
            rows in prop::collection::vec((0usize..3, 1u32..4, prop::collection::vec(-5.0f64..5.0, 3)), 1..20),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let names: Vec<(String, String, u32)> =
                rows.iter().enumerate().map(|(i, (u, w, _))| (format!("d{i}"), format!("u{u}"), *w)).collect();
            let c = corpus(&names.iter().map(|(d, u, w)| (d.as_str(), u.as_str(), *w)).collect::<Vec<_>>());
            let mut order: Vec<usize> = (0..rows.len()).collect();
            let a = doc_table(&order.iter().map(|&i| (names[i].0.as_str(), rows[i].2.clone())).collect::<Vec<_>>());
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = doc_table(&order.iter().map(|&i| (names[i].0.as_str(), rows[i].2.clone())).collect::<Vec<_>>());
            for level in [Level::Wave, Level::User] {
                for scheme in [UserVectorScheme::FlatDocuments, UserVectorScheme::WaveThenUser] {
                    let ta = aggregate_hierarchical(&a, &c, level, scheme).unwrap();
                    let tb = aggregate_hierarchical(&b, &c, level, scheme).unwrap();
                    prop_assert_eq!(ta.len(), tb.len());
                    for (id, v) in ta.iter() {
                        let w = tb.get(id).unwrap();
                        for (x, y) in v.iter().zip(w) {
                            prop_assert!((x - y).abs() <= 1e-12);
                        }
                    }
                }
            }
        }

        #[test]
        fn constant_table_aggregates_to_constant(
            docs in prop::collection::vec((0usize..3, 1u32..4), 1..15),
            value in prop::collection::vec(-5.0f64..5.0, 1..5),
        ) {
            let names: Vec<(String, String, u32)> =
                docs.iter().enumerate().map(|(i, (u, w))| (format!("d{i}"), format!("u{u}"), *w)).collect();
            let c = corpus(&names.iter().map(|(d, u, w)| (d.as_str(), u.as_str(), *w)).collect::<Vec<_>>());
            let t = doc_table(&names.iter().map(|(d, _, _)| (d.as_str(), value.clone())).collect::<Vec<_>>());
            for level in [Level::Wave, Level::User] {
                for scheme in [UserVectorScheme::FlatDocuments, UserVectorScheme::WaveThenUser] {
                    for (_, v) in aggregate_hierarchical(&t, &c, level, scheme).unwrap().iter() {
                        prop_assert_eq!(v, value.as_slice());
                    }
                }
            }
        }

        #[test]
        fn compatibility_follows_taxonomy(p in prop::sample::select(Pooler::ALL.to_vec()), k in 0usize..4, lvl in prop::sample::select(Level::ALL.to_vec())) {
            let kind = [ModelKind::MaskedEncoder, ModelKind::Autoregressive,
                ModelKind::Hulm(BlockMode::ConcatBlocks), ModelKind::Hulm(BlockMode::OneDocPerBlock)][k];
            let hulm = matches!(kind, ModelKind::Hulm(_));
            let expected = match p {
                Pooler::Cls => kind == ModelKind::MaskedEncoder,
                Pooler::At => true,
                Pooler::Lt => kind != ModelKind::MaskedEncoder,
                Pooler::LtInsep => hulm,
                Pooler::U => hulm && (lvl != Level::Document || kind == ModelKind::Hulm(BlockMode::OneDocPerBlock)),
            };
            let s = ReprSpec { model_tag: "m".into(), pooler: p, layer: LayerChoice::Last, level: lvl };
            prop_assert_eq!(s.check(kind).is_ok(), expected);
        }
    }
}
