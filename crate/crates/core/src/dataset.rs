//! Trial and stimulus metadata.
//!
//! A [`Dataset`] is an ordered list of [`TrialRecord`]s. Each trial names one
//! attended stimulus and one or more competing (unattended) stimuli. Datasets
//! are read from a four-column CSV file or an equivalent JSON array:
//!
//! ```text
//! trial_id,subject_id,attended_stimulus,unattended_stimuli
//! t1,subjA,S1,S2
//! t2,subjA,S1,S2|S3
//! ```

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, MetadataIssue, Result};

/// Separator between stimulus ids in the `unattended_stimuli` CSV column and
/// in the text encoding of a [`StimulusPair`].
pub const STIMULUS_SEPARATOR: char = '|';

const CSV_HEADER: [&str; 4] = ["trial_id", "subject_id", "attended_stimulus", "unattended_stimuli"];

/// Opaque identifier of one audio stimulus.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StimulusId(String);

impl StimulusId {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        if id.is_empty() || id.contains(STIMULUS_SEPARATOR) {
            return Err(Error::InvalidStimulusId(id));
        }
        Ok(StimulusId(id))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for StimulusId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        StimulusId::new(value)
    }
}

impl From<StimulusId> for String {
    fn from(id: StimulusId) -> String {
        id.0
    }
}

impl fmt::Display for StimulusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Unordered pair of distinct stimuli, stored with `first < second`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StimulusPair {
    first: StimulusId,
    second: StimulusId,
}

impl StimulusPair {
    pub fn first(&self) -> &StimulusId {
        &self.first
    }

    pub fn second(&self) -> &StimulusId {
        &self.second
    }

    pub fn contains(&self, id: &StimulusId) -> bool {
        &self.first == id || &self.second == id
    }

    /// `"first|second"`. Unambiguous because ids never contain the separator.
    pub fn encode(&self) -> String {
        format!("{}{}{}", self.first, STIMULUS_SEPARATOR, self.second)
    }
}

impl fmt::Display for StimulusPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

/// Orders two distinct stimuli so that `canonical_pair(a, b) == canonical_pair(b, a)`.
pub fn canonical_pair(a: &StimulusId, b: &StimulusId) -> Result<StimulusPair> {
    if a == b {
        return Err(Error::InvalidPair(a.to_string()));
    }
    let (first, second) = if a < b { (a, b) } else { (b, a) };
    Ok(StimulusPair {
        first: first.clone(),
        second: second.clone(),
    })
}

/// Metadata of one EEG trial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrialRecord {
    trial_id: String,
    subject_id: String,
    attended: StimulusId,
    unattended: Vec<StimulusId>,
    eeg_ref: Option<String>,
    envelope_refs: BTreeMap<StimulusId, String>,
}

impl TrialRecord {
    pub fn new(
        trial_id: impl Into<String>,
        subject_id: impl Into<String>,
        attended: StimulusId,
        unattended: Vec<StimulusId>,
    ) -> Result<Self, MetadataIssue> {
        let trial_id = trial_id.into();
        if trial_id.is_empty() {
            return Err(MetadataIssue::Malformed("empty trial_id".into()));
        }
        if unattended.is_empty() {
            return Err(MetadataIssue::EmptyUnattended);
        }
        if unattended.contains(&attended) {
            return Err(MetadataIssue::AttendedAmongUnattended(attended.to_string()));
        }
        let mut seen = HashSet::new();
        for id in &unattended {
            if !seen.insert(id) {
                return Err(MetadataIssue::DuplicateUnattended(id.to_string()));
            }
        }
        Ok(TrialRecord {
            trial_id,
            subject_id: subject_id.into(),
            attended,
            unattended,
            eeg_ref: None,
            envelope_refs: BTreeMap::new(),
        })
    }

    /// Two-speaker shorthand used heavily in tests and scenario generation.
    pub fn pair(
        trial_id: impl Into<String>,
        subject_id: impl Into<String>,
        attended: &str,
        unattended: &str,
    ) -> Result<Self> {
        let attended = StimulusId::new(attended)?;
        let unattended = StimulusId::new(unattended)?;
        TrialRecord::new(trial_id, subject_id, attended, vec![unattended]).map_err(|issue| Error::Metadata {
            record: 0,
            field: "unattended_stimuli".into(),
            issue,
        })
    }

    pub fn with_eeg_ref(mut self, eeg_ref: impl Into<String>) -> Self {
        self.eeg_ref = Some(eeg_ref.into());
        self
    }

    pub fn with_envelope_ref(mut self, stimulus: StimulusId, path: impl Into<String>) -> Self {
        self.envelope_refs.insert(stimulus, path.into());
        self
    }

    pub fn trial_id(&self) -> &str {
        &self.trial_id
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn attended(&self) -> &StimulusId {
        &self.attended
    }

    pub fn unattended(&self) -> &[StimulusId] {
        &self.unattended
    }

    pub fn eeg_ref(&self) -> Option<&str> {
        self.eeg_ref.as_deref()
    }

    pub fn envelope_refs(&self) -> &BTreeMap<StimulusId, String> {
        &self.envelope_refs
    }

    /// Number of simultaneously presented speakers (attended + competitors).
    pub fn speaker_count(&self) -> usize {
        1 + self.unattended.len()
    }

    /// Every stimulus presented in this trial, attended first.
    pub fn stimuli(&self) -> impl Iterator<Item = &StimulusId> {
        std::iter::once(&self.attended).chain(self.unattended.iter())
    }

    /// The canonical (attended, unattended) pair; only defined for two-speaker trials.
    pub fn stimulus_pair(&self) -> Result<StimulusPair> {
        match self.unattended.as_slice() {
            [single] => canonical_pair(&self.attended, single),
            _ => Err(Error::PairUndefined(self.trial_id.clone())),
        }
    }
}

/// An ordered collection of trials.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    name: String,
    trials: Vec<TrialRecord>,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate trial ids.
    pub fn new(name: impl Into<String>, trials: Vec<TrialRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, trial) in trials.iter().enumerate() {
            if !seen.insert(trial.trial_id.as_str()) {
                return Err(Error::Metadata {
                    record: i + 1,
                    field: "trial_id".into(),
                    issue: MetadataIssue::DuplicateTrialId(trial.trial_id.clone()),
                });
            }
        }
        Ok(Dataset {
            name: name.into(),
            trials,
        })
    }

    /// Skips the uniqueness check; run [`validate_dataset`] on the result.
    pub fn from_trials_unchecked(name: impl Into<String>, trials: Vec<TrialRecord>) -> Self {
        Dataset {
            name: name.into(),
            trials,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn trials(&self) -> &[TrialRecord] {
        &self.trials
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn trial(&self, trial_id: &str) -> Option<&TrialRecord> {
        self.trials.iter().find(|t| t.trial_id == trial_id)
    }

    /// Lookup table from trial id to position.
    pub fn index(&self) -> BTreeMap<&str, usize> {
        self.trials
            .iter()
            .enumerate()
            .map(|(i, t)| (t.trial_id.as_str(), i))
            .collect()
    }

    /// Every distinct stimulus, in sorted order.
    pub fn stimuli(&self) -> BTreeSet<&StimulusId> {
        self.trials.iter().flat_map(|t| t.stimuli()).collect()
    }

    /// Keeps the trials for which `keep` returns true, in order.
    pub fn filter(&self, name: impl Into<String>, mut keep: impl FnMut(&TrialRecord) -> bool) -> Dataset {
        Dataset {
            name: name.into(),
            trials: self.trials.iter().filter(|t| keep(t)).cloned().collect(),
        }
    }

    /// Trials grouped by subject, subjects in sorted order.
    pub fn by_subject(&self) -> BTreeMap<&str, Dataset> {
        let mut groups: BTreeMap<&str, Vec<TrialRecord>> = BTreeMap::new();
        for t in &self.trials {
            groups.entry(t.subject_id.as_str()).or_default().push(t.clone());
        }
        groups
            .into_iter()
            .map(|(s, trials)| {
                let name = format!("{}:{}", self.name, s);
                (s, Dataset { name, trials })
            })
            .collect()
    }

    pub fn from_csv_str(name: impl Into<String>, text: &str) -> Result<Self> {
        parse_csv(name.into(), text)
    }

    pub fn from_json_str(name: impl Into<String>, text: &str) -> Result<Self> {
        parse_json(name.into(), text)
    }

    /// Serializes the four metadata columns; signal references are not representable in CSV.
    pub fn to_csv_string(&self) -> String {
        let mut out = CSV_HEADER.join(",");
        out.push('\n');
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        for t in &self.trials {
            let unattended = join_ids(&t.unattended);
            writer
                .write_record([
                    t.trial_id.as_str(),
                    t.subject_id.as_str(),
                    t.attended.as_str(),
                    unattended.as_str(),
                ])
                .expect("writing to memory cannot fail");
        }
        let body = writer.into_inner().expect("in-memory writer");
        out.push_str(std::str::from_utf8(&body).expect("csv output is UTF-8"));
        out
    }

    pub fn to_json_string(&self) -> String {
        let rows: Vec<JsonTrial> = self.trials.iter().map(JsonTrial::from).collect();
        serde_json::to_string_pretty(&rows).expect("metadata serializes")
    }
}

fn join_ids(ids: &[StimulusId]) -> String {
    ids.iter()
        .map(StimulusId::as_str)
        .collect::<Vec<_>>()
        .join(&STIMULUS_SEPARATOR.to_string())
}

/// Reads a metadata file, choosing the format from the extension
/// (`.json` is JSON, anything else is CSV). The dataset is named after the file stem.
pub fn parse_trial_metadata(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("dataset")
        .to_string();
    let is_json = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        parse_json(name, &text)
    } else {
        parse_csv(name, &text)
    }
}

fn metadata_err(record: usize, field: &str, issue: MetadataIssue) -> Error {
    Error::Metadata {
        record,
        field: field.to_string(),
        issue,
    }
}

fn parse_id(record: usize, field: &str, raw: &str) -> Result<StimulusId> {
    StimulusId::new(raw.trim())
        .map_err(|_| metadata_err(record, field, MetadataIssue::InvalidStimulusId(raw.to_string())))
}

fn parse_csv(name: String, text: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());

    let header = reader
        .headers()
        .map_err(|e| metadata_err(1, "header", MetadataIssue::Malformed(e.to_string())))?;
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != CSV_HEADER {
        return Err(metadata_err(
            1,
            "header",
            MetadataIssue::Malformed(format!("expected `{}`", CSV_HEADER.join(","))),
        ));
    }

    let mut trials = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            metadata_err(line, "row", MetadataIssue::Malformed(e.to_string()))
        })?;
        let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
        if row.len() != CSV_HEADER.len() {
            return Err(metadata_err(
                line,
                "row",
                MetadataIssue::Malformed(format!("expected 4 fields, found {}", row.len())),
            ));
        }
        let trial_id = row[0].trim();
        if trial_id.is_empty() {
            return Err(metadata_err(line, "trial_id", MetadataIssue::Malformed("empty".into())));
        }
        let attended = parse_id(line, "attended_stimulus", &row[2])?;
        let unattended_raw = row[3].trim();
        if unattended_raw.is_empty() {
            return Err(metadata_err(line, "unattended_stimuli", MetadataIssue::EmptyUnattended));
        }
        let unattended = unattended_raw
            .split(STIMULUS_SEPARATOR)
            .map(|s| parse_id(line, "unattended_stimuli", s))
            .collect::<Result<Vec<_>>>()?;
        let trial = TrialRecord::new(trial_id, row[1].trim(), attended, unattended)
            .map_err(|issue| metadata_err(line, "unattended_stimuli", issue))?;
        if !seen.insert(trial_id.to_string()) {
            return Err(metadata_err(
                line,
                "trial_id",
                MetadataIssue::DuplicateTrialId(trial_id.to_string()),
            ));
        }
        trials.push(trial);
    }
    Ok(Dataset { name, trials })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonTrial {
    trial_id: String,
    subject_id: String,
    attended_stimulus: String,
    unattended_stimuli: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    eeg_ref: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    envelope_refs: BTreeMap<String, String>,
}

impl From<&TrialRecord> for JsonTrial {
    fn from(t: &TrialRecord) -> Self {
        JsonTrial {
            trial_id: t.trial_id.clone(),
            subject_id: t.subject_id.clone(),
            attended_stimulus: t.attended.to_string(),
            unattended_stimuli: t.unattended.iter().map(ToString::to_string).collect(),
            eeg_ref: t.eeg_ref.clone(),
            envelope_refs: t
                .envelope_refs
                .iter()
                .map(|(k, v)| (k.to_string(), v.clone()))
                .collect(),
        }
    }
}

fn parse_json(name: String, text: &str) -> Result<Dataset> {
    let rows: Vec<serde_json::Value> = serde_json::from_str(text)
        .map_err(|e| metadata_err(e.line(), "document", MetadataIssue::Malformed(e.to_string())))?;
    let mut trials = Vec::with_capacity(rows.len());
    let mut seen = HashSet::new();
    for (i, value) in rows.into_iter().enumerate() {
        let record = i + 1;
        let raw: JsonTrial = serde_json::from_value(value)
            .map_err(|e| metadata_err(record, "object", MetadataIssue::Malformed(e.to_string())))?;
        if raw.trial_id.is_empty() {
            return Err(metadata_err(
                record,
                "trial_id",
                MetadataIssue::Malformed("empty".into()),
            ));
        }
        let attended = parse_id(record, "attended_stimulus", &raw.attended_stimulus)?;
        let unattended = raw
            .unattended_stimuli
            .iter()
            .map(|s| parse_id(record, "unattended_stimuli", s))
            .collect::<Result<Vec<_>>>()?;
        let mut trial = TrialRecord::new(raw.trial_id.clone(), raw.subject_id, attended, unattended)
            .map_err(|issue| metadata_err(record, "unattended_stimuli", issue))?;
        trial.eeg_ref = raw.eeg_ref;
        for (k, v) in raw.envelope_refs {
            let id = parse_id(record, "envelope_refs", &k)?;
            trial.envelope_refs.insert(id, v);
        }
        if !seen.insert(raw.trial_id.clone()) {
            return Err(metadata_err(
                record,
                "trial_id",
                MetadataIssue::DuplicateTrialId(raw.trial_id),
            ));
        }
        trials.push(trial);
    }
    Ok(Dataset { name, trials })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Violation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub severity: Severity,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trial_id: Option<String>,
    pub message: String,
}

/// Outcome of [`validate_dataset`]. Empty iff every invariant holds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn violations(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Violation)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warning)
    }

    pub fn has_violations(&self) -> bool {
        self.violations().next().is_some()
    }

    fn push(&mut self, severity: Severity, trial_id: Option<&str>, message: String) {
        self.findings.push(Finding {
            severity,
            trial_id: trial_id.map(str::to_string),
            message,
        });
    }
}

/// Checks dataset-level invariants. When `data_dir` is given, also checks
/// that every signal file needed for training and evaluation exists.
pub fn validate_dataset(d: &Dataset, data_dir: Option<&Path>) -> ValidationReport {
    let mut report = ValidationReport::default();
    if d.is_empty() {
        report.push(Severity::Violation, None, "dataset has no trials".into());
    }

    let mut seen = HashSet::new();
    for t in &d.trials {
        if !seen.insert(t.trial_id.as_str()) {
            report.push(
                Severity::Violation,
                Some(&t.trial_id),
                format!("duplicate trial_id {:?}", t.trial_id),
            );
        }
    }

    let speaker_counts: BTreeSet<usize> = d.trials.iter().map(TrialRecord::speaker_count).collect();
    if speaker_counts.len() > 1 {
        let counts: Vec<String> = speaker_counts.iter().map(ToString::to_string).collect();
        report.push(
            Severity::Warning,
            None,
            format!("mixed speaker counts across trials: {}", counts.join(", ")),
        );
    }

    if let Some(dir) = data_dir {
        for t in &d.trials {
            let eeg = crate::signal_io::eeg_path(dir, t);
            if !eeg.as_ref().is_ok_and(|p| p.exists()) {
                report.push(
                    Severity::Violation,
                    Some(&t.trial_id),
                    format!("missing EEG signal for trial {:?}", t.trial_id),
                );
            }
            for s in t.stimuli() {
                let env = crate::signal_io::envelope_path(dir, t, s);
                if !env.as_ref().is_ok_and(|p| p.exists()) {
                    report.push(
                        Severity::Violation,
                        Some(&t.trial_id),
                        format!("missing envelope for stimulus {s:?} (trial {:?})", t.trial_id),
                    );
                }
            }
        }
    }
    report
}
