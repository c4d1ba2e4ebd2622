//! Typed biomarker table: schema, exact-text cell values, CSV ingest and
//! the complete-case / binary-diagnosis filter.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Canonical column names of the QT-PAD-style feature table.
pub mod columns {
    pub const AGE: &str = "AGE";
    pub const GENDER: &str = "GENDER";
    pub const EDUCATION: &str = "EDUCATION";
    pub const APOE4: &str = "APOE4";
    pub const FDG: &str = "FDG";
    pub const AV45: &str = "AV45";
    pub const CSF_ABETA: &str = "CSF_ABETA(pg/ml)";
    pub const CSF_TAU: &str = "CSF_TAU(pg/ml)";
    pub const CSF_PTAU: &str = "CSF_PTAU(pg/ml)";
    pub const WHOLE_BRAIN: &str = "WholeBrain";
    pub const HIPPOCAMPUS: &str = "Hippocampus";
    pub const ENTORHINAL: &str = "Entorhinal";
    pub const VENTRICLES: &str = "Ventricles";
    pub const MID_TEMP: &str = "MidTemp";
    pub const FUSIFORM: &str = "Fusiform";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Integer {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min: Option<i64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max: Option<i64>,
    },
    Decimal,
    Categorical {
        values: Vec<String>,
    },
}

impl FeatureKind {
    pub fn is_numeric(&self) -> bool {
        !matches!(self, FeatureKind::Categorical { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    /// Noun phrase used when the feature is written out as a sentence.
    pub phrase: String,
}

impl FeatureSpec {
    fn new(name: &str, kind: FeatureKind, unit: Option<&str>, phrase: &str) -> Self {
        FeatureSpec {
            name: name.to_string(),
            kind,
            unit: unit.map(str::to_string),
            phrase: phrase.to_string(),
        }
    }
}

/// Ordered feature columns. Names are unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::Schema {
                    missing: vec![],
                    extra: vec![f.name.clone()],
                });
            }
        }
        Ok(FeatureSchema { features })
    }

    /// The fifteen-column biomarker schema.
    pub fn qt_pad() -> Self {
        use columns::*;
        let int = || FeatureKind::Integer { min: None, max: None };
        let features = vec![
            FeatureSpec::new(AGE, int(), None, "age"),
            FeatureSpec::new(
                GENDER,
                FeatureKind::Categorical {
                    values: vec!["Male".into(), "Female".into()],
                },
                None,
                "gender",
            ),
            FeatureSpec::new(EDUCATION, int(), None, "years of education"),
            FeatureSpec::new(
                APOE4,
                FeatureKind::Integer {
                    min: Some(0),
                    max: Some(2),
                },
                None,
                "APOE4 genetic variant",
            ),
            FeatureSpec::new(FDG, FeatureKind::Decimal, None, "FDG measure"),
            FeatureSpec::new(AV45, FeatureKind::Decimal, None, "amyloid PET measure"),
            FeatureSpec::new(
                CSF_ABETA,
                FeatureKind::Decimal,
                Some("pg/ml"),
                "CSF A-beta42 measure",
            ),
            FeatureSpec::new(CSF_TAU, FeatureKind::Decimal, Some("pg/ml"), "CSF tau measure"),
            FeatureSpec::new(
                CSF_PTAU,
                FeatureKind::Decimal,
                Some("pg/ml"),
                "CSF phosphorylated tau measure",
            ),
            FeatureSpec::new(WHOLE_BRAIN, int(), None, "whole brain volume"),
            FeatureSpec::new(HIPPOCAMPUS, int(), None, "hippocampus region volume"),
            FeatureSpec::new(ENTORHINAL, int(), None, "entorhinal volume"),
            FeatureSpec::new(VENTRICLES, int(), None, "ventricles volume"),
            FeatureSpec::new(MID_TEMP, int(), None, "middle temporal lobe volume"),
            FeatureSpec::new(FUSIFORM, int(), None, "fusiform gyrus volume"),
        ];
        FeatureSchema { features }
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    /// Parses one source cell according to the column kind. Cells that do not
    /// parse are recorded as missing.
    pub fn parse_cell(&self, column: usize, raw: &str) -> FeatureValue {
        let spec = &self.features[column];
        if raw.is_empty() {
            return FeatureValue::missing();
        }
        match &spec.kind {
            FeatureKind::Integer { min, max } => match raw.parse::<i64>() {
                Ok(v) if min.is_none_or(|m| v >= m) && max.is_none_or(|m| v <= m) => {
                    FeatureValue::numeric(raw, v as f64)
                }
                _ => FeatureValue::missing(),
            },
            FeatureKind::Decimal => match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => FeatureValue::numeric(raw, v),
                _ => FeatureValue::missing(),
            },
            FeatureKind::Categorical { values } => {
                if values.iter().any(|v| v == raw) {
                    FeatureValue::text(raw)
                } else {
                    FeatureValue::missing()
                }
            }
        }
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::qt_pad()
    }
}

/// A single cell. Rendering always re-emits `raw_text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub missing: bool,
}

impl FeatureValue {
    pub fn missing() -> Self {
        FeatureValue {
            raw_text: String::new(),
            numeric: None,
            missing: true,
        }
    }

    pub fn numeric(raw: &str, value: f64) -> Self {
        FeatureValue {
            raw_text: raw.to_string(),
            numeric: Some(value),
            missing: false,
        }
    }

    pub fn text(raw: &str) -> Self {
        FeatureValue {
            raw_text: raw.to_string(),
            numeric: None,
            missing: false,
        }
    }
}

/// Binary diagnosis, serialized as 0 (CN) / 1 (AD).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Cn = 0,
    Ad = 1,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_bool(is_ad: bool) -> Self {
        if is_ad {
            Label::Ad
        } else {
            Label::Cn
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Cn => Label::Ad,
            Label::Ad => Label::Cn,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Cn),
            1 => Ok(Label::Ad),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub values: Vec<FeatureValue>,
    pub label: Option<Label>,
}

impl SubjectRecord {
    pub fn is_complete(&self) -> bool {
        self.values.iter().all(|v| !v.missing)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiagnosisClass {
    Cn,
    Ad,
    Exclude,
}

/// Maps source diagnosis strings onto the binary label. Unmapped strings
/// are excluded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiagnosisMap(pub BTreeMap<String, DiagnosisClass>);

impl DiagnosisMap {
    pub fn classify(&self, raw: &str) -> Option<Label> {
        match self.0.get(raw) {
            Some(DiagnosisClass::Cn) => Some(Label::Cn),
            Some(DiagnosisClass::Ad) => Some(Label::Ad),
            _ => None,
        }
    }
}

impl Default for DiagnosisMap {
    fn default() -> Self {
        let mut m = BTreeMap::new();
        m.insert("CN".to_string(), DiagnosisClass::Cn);
        m.insert("AD".to_string(), DiagnosisClass::Ad);
        DiagnosisMap(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadOptions {
    pub id_column: String,
    pub label_column: String,
    pub diagnosis_map: DiagnosisMap,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            id_column: "RID".to_string(),
            label_column: "DX".to_string(),
            diagnosis_map: DiagnosisMap::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub rows_loaded: usize,
    pub removed_unlabeled: usize,
    pub removed_incomplete: usize,
    pub retained: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub cn: usize,
    pub ad: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.cn + self.ad
    }
}

/// Immutable after construction; subject ids are unique.
#[derive(Debug, Clone)]
pub struct Dataset {
    schema: FeatureSchema,
    subjects: Vec<SubjectRecord>,
    provenance: Provenance,
    index: HashMap<String, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema && self.subjects == other.subjects && self.provenance == other.provenance
    }
}

impl Dataset {
    pub fn new(schema: FeatureSchema, subjects: Vec<SubjectRecord>, provenance: Provenance) -> Result<Self> {
        let mut index = HashMap::with_capacity(subjects.len());
        for (i, s) in subjects.iter().enumerate() {
            if s.values.len() != schema.len() {
                return Err(Error::Integrity(format!(
                    "subject {} has {} values, schema has {} columns",
                    s.subject_id,
                    s.values.len(),
                    schema.len()
                )));
            }
            if index.insert(s.subject_id.clone(), i).is_some() {
                return Err(Error::Integrity(format!("duplicate subject id {}", s.subject_id)));
            }
        }
        Ok(Dataset {
            schema,
            subjects,
            provenance,
            index,
        })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn get(&self, subject_id: &str) -> Option<&SubjectRecord> {
        self.index.get(subject_id).map(|&i| &self.subjects[i])
    }

    pub fn position(&self, subject_id: &str) -> Option<usize> {
        self.index.get(subject_id).copied()
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema, opts: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ds = load_csv_reader(file, schema, opts)?;
    ds.provenance.source = path.display().to_string();
    Ok(ds)
}

pub fn load_csv_reader<R: Read>(reader: R, schema: &FeatureSchema, opts: &LoadOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut expected: Vec<&str> = schema.names().collect();
    expected.push(&opts.id_column);
    expected.push(&opts.label_column);
    let header_names: Vec<&str> = headers.iter().collect();
    let mut missing: Vec<String> = expected
        .iter()
        .filter(|c| !header_names.contains(c))
        .map(|c| c.to_string())
        .collect();
    let mut extra = Vec::new();
    let mut seen = HashSet::new();
    for h in &header_names {
        if !expected.contains(h) || !seen.insert(*h) {
            extra.push(h.to_string());
        }
    }
    missing.sort();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::Schema { missing, extra });
    }

    let col = |name: &str| header_names.iter().position(|h| *h == name).unwrap();
    let id_col = col(&opts.id_column);
    let label_col = col(&opts.label_column);
    let feature_cols: Vec<usize> = schema.names().map(col).collect();

    let mut subjects = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let get = |i: usize| row.get(i).unwrap_or("");
        let values = feature_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| schema.parse_cell(j, get(c)))
            .collect();
        subjects.push(SubjectRecord {
            subject_id: get(id_col).to_string(),
            values,
            label: opts.diagnosis_map.classify(get(label_col)),
        });
    }
    let provenance = Provenance {
        source: String::new(),
        rows_loaded: subjects.len(),
        removed_unlabeled: 0,
        removed_incomplete: 0,
        retained: subjects.len(),
    };
    Dataset::new(schema.clone(), subjects, provenance)
}

/// Keeps subjects that are labeled and have no missing value, in input order.
pub fn filter_complete_binary(d: &Dataset) -> Result<Dataset> {
    let mut provenance = d.provenance.clone();
    let mut kept = Vec::with_capacity(d.len());
    for s in &d.subjects {
        if s.label.is_none() {
            provenance.removed_unlabeled += 1;
        } else if !s.is_complete() {
            provenance.removed_incomplete += 1;
        } else {
            kept.push(s.clone());
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyDataset);
    }
    provenance.retained = kept.len();
    Dataset::new(d.schema.clone(), kept, provenance)
}

pub fn class_counts(d: &Dataset) -> ClassCounts {
    let mut counts = ClassCounts { cn: 0, ad: 0 };
    for s in &d.subjects {
        match s.label {
            Some(Label::Cn) => counts.cn += 1,
            Some(Label::Ad) => counts.ad += 1,
            None => {}
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "RID,AGE,GENDER,EDUCATION,APOE4,FDG,AV45,CSF_ABETA(pg/ml),CSF_TAU(pg/ml),CSF_PTAU(pg/ml),WholeBrain,Hippocampus,Entorhinal,Ventricles,MidTemp,Fusiform,DX";

    fn row(id: &str, tau: &str, dx: &str) -> String {
        format!("{id},73,Female,11,0,1.131,1.4311,1163.2,{tau},29.48,978382,6728,3278,31733,21383,18321,{dx}")
    }

    fn load(body: &[String]) -> Result<Dataset> {
        let text = format!("{HEADER}\n{}\n", body.join("\n"));
        load_csv_reader(text.as_bytes(), &FeatureSchema::qt_pad(), &LoadOptions::default())
    }

    #[test]
    fn schema_is_fifteen_unique_columns() {
        let s = FeatureSchema::qt_pad();
        assert_eq!(s.len(), 15);
        let names: HashSet<_> = s.names().collect();
        assert_eq!(names.len(), 15);
        assert!(FeatureSchema::new(vec![s.features()[0].clone(), s.features()[0].clone()]).is_err());
    }

    #[test]
    fn loads_clean_rows() {
        let d = load(&[
            row("1", "305.2", "CN"),
            row("2", "305.2", "AD"),
            row("3", "1.0", "CN"),
        ])
        .unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.get("2").unwrap().label, Some(Label::Ad));
        let tau = d.schema().index_of(columns::CSF_TAU).unwrap();
        assert_eq!(d.subjects()[0].values[tau].raw_text, "305.2");
        assert_eq!(d.subjects()[0].values[tau].numeric, Some(305.2));
    }

    #[test]
    fn empty_cell_is_missing() {
        let d = load(&[row("1", "", "CN")]).unwrap();
        let tau = d.schema().index_of(columns::CSF_TAU).unwrap();
        let v = &d.subjects()[0].values[tau];
        assert!(v.missing);
        assert!(v.numeric.is_none());
        assert!(v.raw_text.is_empty());
    }

    #[test]
    fn unparseable_and_out_of_domain_cells_are_missing() {
        let schema = FeatureSchema::qt_pad();
        let apoe = schema.index_of(columns::APOE4).unwrap();
        let gender = schema.index_of(columns::GENDER).unwrap();
        let tau = schema.index_of(columns::CSF_TAU).unwrap();
        assert!(schema.parse_cell(apoe, "3").missing);
        assert!(!schema.parse_cell(apoe, "2").missing);
        assert!(schema.parse_cell(gender, "Other").missing);
        assert!(schema.parse_cell(tau, ">1700").missing);
        assert!(schema.parse_cell(tau, "NaN").missing);
    }

    #[test]
    fn unmapped_diagnosis_leaves_label_absent() {
        let mut opts = LoadOptions::default();
        opts.diagnosis_map.0.insert("Dementia".into(), DiagnosisClass::Ad);
        let text = format!(
            "{HEADER}\n{}\n{}\n",
            row("1", "1", "MCI"),
            row("2", "1", "Dementia")
        );
        let d = load_csv_reader(text.as_bytes(), &FeatureSchema::qt_pad(), &opts).unwrap();
        assert_eq!(d.subjects()[0].label, None);
        assert_eq!(d.subjects()[1].label, Some(Label::Ad));
    }

    #[test]
    fn header_mismatch_lists_columns() {
        let text = "RID,AGE,DX,Bogus\n1,2,CN,3\n";
        match load_csv_reader(text.as_bytes(), &FeatureSchema::qt_pad(), &LoadOptions::default()) {
            Err(Error::Schema { missing, extra }) => {
                assert_eq!(missing.len(), 14);
                assert!(missing.contains(&"Fusiform".to_string()));
                assert_eq!(extra, vec!["Bogus".to_string()]);
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_subject_id_is_integrity_error() {
        let err = load(&[row("7", "1", "CN"), row("7", "2", "AD")]).unwrap_err();
        assert!(matches!(err, Error::Integrity(_)));
    }

    #[test]
    fn filter_drops_incomplete_and_unlabeled() {
        let d = load(&[
            row("1", "1", "CN"),
            row("2", "", "AD"),
            row("3", "2", "MCI"),
            row("4", "3", "AD"),
        ])
        .unwrap();
        let f = filter_complete_binary(&d).unwrap();
        let ids: Vec<_> = f.subjects().iter().map(|s| s.subject_id.as_str()).collect();
        assert_eq!(ids, ["1", "4"]);
        assert_eq!(f.provenance().removed_incomplete, 1);
        assert_eq!(f.provenance().removed_unlabeled, 1);
        assert_eq!(f.provenance().retained, 2);
        assert_eq!(filter_complete_binary(&f).unwrap(), f);
    }

    #[test]
    fn filter_to_nothing_is_error() {
        let d = load(&[row("1", "", "CN")]).unwrap();
        assert!(matches!(filter_complete_binary(&d), Err(Error::EmptyDataset)));
    }

    #[test]
    fn class_counts_cover_all_subjects() {
        let d = load(&[
            row("1", "1", "CN"),
            row("2", "1", "AD"),
            row("3", "1", "CN"),
            row("4", "1", "AD"),
        ])
        .unwrap();
        assert_eq!(class_counts(&d), ClassCounts { cn: 2, ad: 2 });
        let empty = Dataset::new(FeatureSchema::qt_pad(), vec![], Provenance::default()).unwrap();
        assert_eq!(class_counts(&empty), ClassCounts { cn: 0, ad: 0 });
    }

    #[test]
    fn label_serializes_as_digit() {
        assert_eq!(serde_json::to_string(&Label::Ad).unwrap(), "1");
        assert_eq!(serde_json::from_str::<Label>("0").unwrap(), Label::Cn);
        assert!(serde_json::from_str::<Label>("2").is_err());
    }
}
