//! Speaker-profile attribute classes and metadata ingestion.
//!
//! Every attribute is a closed, ordered class set. Metadata fields pass
//! through [`bin_age`] and [`RegionMap::map_region`]; fields that are absent
//! in the source stay absent in the resulting [`SpeakerProfile`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed, ordered label set.
pub trait ClosedClass: Copy + Eq + Ord + fmt::Debug + 'static {
    /// Attribute name used in manifests and error messages.
    const ATTRIBUTE: &'static str;

    fn all() -> &'static [Self];

    /// Canonical label as it appears in rendered targets.
    fn label(self) -> &'static str;

    /// Position in the ordered class list.
    fn index(self) -> usize {
        Self::all().iter().position(|c| *c == self).unwrap()
    }

    fn from_index(index: usize) -> Option<Self> {
        Self::all().get(index).copied()
    }

    /// Every spelling the answer parser accepts for this class.
    fn surface_forms(self) -> Vec<String> {
        vec![self.label().to_string()]
    }

    fn from_label(text: &str) -> Option<Self> {
        let needle = normalize_label(text);
        Self::all().iter().copied().find(|c| {
            c.surface_forms()
                .iter()
                .any(|form| normalize_label(form) == needle)
        })
    }
}

fn normalize_label(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Declares a label enum with `Display`, `FromStr` and label-based serde.
macro_rules! closed_class {
    (
        $(#[$meta:meta])*
        $name:ident, $attr:literal $(, forms = $forms:path)? { $($variant:ident => $label:literal),+ $(,)? }
    ) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub enum $name {
            $($variant),+
        }

        impl $crate::taxonomy::ClosedClass for $name {
            const ATTRIBUTE: &'static str = $attr;

            fn all() -> &'static [Self] {
                &[$($name::$variant),+]
            }

            fn label(self) -> &'static str {
                match self {
                    $($name::$variant => $label),+
                }
            }

            $(fn surface_forms(self) -> Vec<String> {
                $forms(self)
            })?
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str($crate::taxonomy::ClosedClass::label(*self))
            }
        }

        impl std::str::FromStr for $name {
            type Err = $crate::error::Error;

            fn from_str(s: &str) -> $crate::error::Result<Self> {
                <$name as $crate::taxonomy::ClosedClass>::from_label(s).ok_or_else(|| {
                    $crate::error::Error::Parse(format!("unknown {} label {:?}", $attr, s))
                })
            }
        }

        impl serde::Serialize for $name {
            fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
                serializer.serialize_str($crate::taxonomy::ClosedClass::label(*self))
            }
        }

        impl<'de> serde::Deserialize<'de> for $name {
            fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(deserializer)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}
pub(crate) use closed_class;

closed_class!(Gender, "gender" {
    Male => "male",
    Female => "female",
});

closed_class!(
    /// Ten ordinal age bins; `76+` is open-ended.
    AgeBin, "age", forms = age_forms {
        Age1To7 => "1–7",
        Age8To12 => "8–12",
        Age13To17 => "13–17",
        Age18To25 => "18–25",
        Age26To35 => "26–35",
        Age36To45 => "36–45",
        Age46To55 => "46–55",
        Age56To65 => "56–65",
        Age66To75 => "66–75",
        Age76Plus => "76+",
    }
);

closed_class!(
    /// Regional / linguistic background.
    Region, "region", forms = region_forms {
        NorthAmerican => "North American",
        European => "European",
        BritishIrish => "British/Irish",
        LatinHispanic => "Latin/Hispanic",
        Oceanian => "Oceanian",
        EastSoutheastAsian => "East/Southeast Asian",
        MiddleEasternNorthAfrican => "Middle Eastern/North African",
        African => "African",
    }
);

closed_class!(
    /// Gender-conditioned pitch class.
    PitchClass, "pitch" {
        VeryLow => "very low",
        Low => "low",
        Normal => "normal",
        High => "high",
        VeryHigh => "very high",
    }
);

closed_class!(BrightnessClass, "brightness" {
    Muted => "muted",
    Mellow => "mellow",
    Neutral => "neutral",
    Bright => "bright",
    Brilliant => "brilliant",
});

/// Inclusive lower bounds of the age bins.
const AGE_LOWER_BOUNDS: [u32; 10] = [1, 8, 13, 18, 26, 36, 46, 56, 66, 76];

impl AgeBin {
    /// Inclusive `(lo, hi)` range; `hi` is `None` for the open top bin.
    pub fn range(self) -> (u32, Option<u32>) {
        let i = self.index();
        let lo = AGE_LOWER_BOUNDS[i];
        let hi = AGE_LOWER_BOUNDS.get(i + 1).map(|next| next - 1);
        (lo, hi)
    }
}

pub fn bin_age(age_years: u32) -> Result<AgeBin> {
    if age_years == 0 {
        return Err(Error::InvalidAge(age_years));
    }
    let idx = AGE_LOWER_BOUNDS
        .iter()
        .rposition(|&lo| age_years >= lo)
        .expect("age >= 1 always matches the first bin");
    Ok(AgeBin::all()[idx])
}

/// Hyphen and "to" spellings of an age range.
fn age_forms(bin: AgeBin) -> Vec<String> {
    let mut forms = vec![bin.label().to_string()];
    if let (lo, Some(hi)) = bin.range() {
        forms.push(format!("{lo}-{hi}"));
        forms.push(format!("{lo} to {hi}"));
    }
    forms
}

/// Region labels with and without spaces around the slash.
fn region_forms(region: Region) -> Vec<String> {
    let label = region.label();
    let mut forms = vec![label.to_string()];
    if label.contains('/') {
        forms.push(label.replace('/', " / "));
    }
    forms
}

/// Nationality → region lookup table.
#[derive(Debug, Clone)]
pub struct RegionMap {
    version: String,
    entries: BTreeMap<String, Region>,
}

const BUILTIN_REGION_MAP: &str = include_str!("../data/region_map.v1.tsv");

static BUILTIN: LazyLock<RegionMap> =
    LazyLock::new(|| BUILTIN_REGION_MAP.parse().expect("builtin region map is valid"));

impl RegionMap {
    pub fn builtin() -> &'static RegionMap {
        &BUILTIN
    }

    pub fn load(path: &Path) -> Result<RegionMap> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn map_region(&self, nationality: &str) -> Result<Region> {
        let key = nationality.trim().to_lowercase();
        self.entries
            .get(&key)
            .copied()
            .ok_or_else(|| Error::UnmappedNationality(nationality.to_string()))
    }
}

impl FromStr for RegionMap {
    type Err = Error;

    fn from_str(text: &str) -> Result<RegionMap> {
        let mut version = String::from("unversioned");
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(v) = comment.trim().strip_prefix("region-map ") {
                    version = v.trim().to_string();
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let (key, class) = line.split_once('\t').ok_or_else(|| Error::Row {
                line: i + 1,
                message: "expected <nationality>\\t<region>".into(),
            })?;
            let region = Region::from_label(class.trim()).ok_or_else(|| Error::Row {
                line: i + 1,
                message: format!("unknown region class {:?}", class.trim()),
            })?;
            let key = key.trim().to_lowercase();
            if entries.insert(key.clone(), region).is_some() {
                return Err(Error::Row {
                    line: i + 1,
                    message: format!("duplicate nationality {key:?}"),
                });
            }
        }
        Ok(RegionMap { version, entries })
    }
}

/// Looks `nationality` up in the builtin table.
pub fn map_region(nationality: &str) -> Result<Region> {
    RegionMap::builtin().map_region(nationality)
}

/// Per-utterance attribute record. Absent fields are never imputed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub utterance_id: String,
    pub gender: Option<Gender>,
    pub age: Option<AgeBin>,
    pub region: Option<Region>,
    pub pitch: Option<PitchClass>,
    pub brightness: Option<BrightnessClass>,
}

impl SpeakerProfile {
    pub fn empty(utterance_id: impl Into<String>) -> Self {
        SpeakerProfile {
            utterance_id: utterance_id.into(),
            gender: None,
            age: None,
            region: None,
            pitch: None,
            brightness: None,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.gender.is_some()
            && self.age.is_some()
            && self.region.is_some()
            && self.pitch.is_some()
            && self.brightness.is_some()
    }

    /// Names of the attributes that are absent.
    pub fn missing_fields(&self) -> Vec<&'static str> {
        let mut missing = Vec::new();
        if self.gender.is_none() {
            missing.push("gender");
        }
        if self.age.is_none() {
            missing.push("age");
        }
        if self.region.is_none() {
            missing.push("region");
        }
        if self.pitch.is_none() {
            missing.push("pitch");
        }
        if self.brightness.is_none() {
            missing.push("brightness");
        }
        missing
    }
}

/// One manifest row before label mapping.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetadataRow {
    pub utterance_id: Option<String>,
    pub gender: Option<String>,
    pub age_years: Option<String>,
    pub nationality: Option<String>,
    pub path: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub rows: usize,
    pub loaded: usize,
    pub skipped: usize,
    pub gender: usize,
    pub age: usize,
    pub region: usize,
    pub unmapped_nationality: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct MetadataTable {
    pub profiles: BTreeMap<String, SpeakerProfile>,
    /// Optional audio path per utterance, as written in the manifest.
    pub audio_paths: BTreeMap<String, String>,
    pub coverage: CoverageStats,
    /// Rows that were skipped because they could not be parsed.
    pub row_errors: Vec<RowIssue>,
    /// Non-fatal field problems (e.g. an unmapped nationality).
    pub warnings: Vec<RowIssue>,
}

fn non_empty(value: Option<String>) -> Option<String> {
    value
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
}

/// Builds profiles from `(line, row)` pairs.
///
/// Malformed rows are skipped and recorded; a duplicate id aborts the load.
/// A nationality missing from `regions` leaves the region absent and is
/// recorded as a warning.
pub fn build_profiles<I>(rows: I, regions: &RegionMap) -> Result<MetadataTable>
where
    I: IntoIterator<Item = (usize, MetadataRow)>,
{
    let mut table = MetadataTable::default();
    for (line, row) in rows {
        table.coverage.rows += 1;
        let Some(id) = non_empty(row.utterance_id) else {
            table.coverage.skipped += 1;
            table.row_errors.push(RowIssue {
                line,
                message: "missing utterance_id".into(),
            });
            continue;
        };
        if table.profiles.contains_key(&id) {
            return Err(Error::DuplicateKey(id));
        }
        let mut profile = SpeakerProfile::empty(id.clone());
        let parsed: std::result::Result<(), String> = (|| {
            if let Some(g) = non_empty(row.gender) {
                profile.gender = Some(parse_gender(&g).ok_or(format!("invalid gender {g:?}"))?);
            }
            if let Some(a) = non_empty(row.age_years) {
                let years: u32 = a
                    .parse::<u32>()
                    .or_else(|_| {
                        a.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite() && *v >= 0.0 && v.fract() == 0.0)
                            .map(|v| v as u32)
                            .ok_or(())
                    })
                    .map_err(|_| format!("invalid age_years {a:?}"))?;
                profile.age = Some(bin_age(years).map_err(|e| e.to_string())?);
            }
            Ok(())
        })();
        if let Err(message) = parsed {
            table.coverage.skipped += 1;
            table.row_errors.push(RowIssue { line, message });
            continue;
        }
        if let Some(nat) = non_empty(row.nationality) {
            match regions.map_region(&nat) {
                Ok(region) => profile.region = Some(region),
                Err(e) => {
                    table.coverage.unmapped_nationality += 1;
                    table.warnings.push(RowIssue {
                        line,
                        message: e.to_string(),
                    });
                }
            }
        }
        if let Some(path) = non_empty(row.path) {
            table.audio_paths.insert(id.clone(), path);
        }
        table.coverage.loaded += 1;
        table.coverage.gender += profile.gender.is_some() as usize;
        table.coverage.age += profile.age.is_some() as usize;
        table.coverage.region += profile.region.is_some() as usize;
        table.profiles.insert(id, profile);
    }
    Ok(table)
}

fn parse_gender(text: &str) -> Option<Gender> {
    match text.trim().to_lowercase().as_str() {
        "m" | "male" => Some(Gender::Male),
        "f" | "female" => Some(Gender::Female),
        _ => None,
    }
}

/// Reads a metadata manifest. `.jsonl`/`.ndjson` files are line-delimited
/// JSON; `.tsv` is tab-delimited; anything else is comma-delimited with a
/// header row.
pub fn load_speaker_metadata(path: &Path, regions: &RegionMap) -> Result<MetadataTable> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_lowercase();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match ext.as_str() {
        "jsonl" | "ndjson" => load_jsonl_rows(&text, regions),
        "tsv" => load_delimited_rows(&text, b'\t', regions),
        _ => load_delimited_rows(&text, b',', regions),
    }
}

fn load_jsonl_rows(text: &str, regions: &RegionMap) -> Result<MetadataTable> {
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<serde_json::Value>(line) {
            Ok(serde_json::Value::Object(map)) => {
                let field = |k: &str| match map.get(k) {
                    Some(serde_json::Value::String(s)) => Some(s.clone()),
                    Some(serde_json::Value::Number(n)) => Some(n.to_string()),
                    _ => None,
                };
                rows.push((
                    i + 1,
                    MetadataRow {
                        utterance_id: field("utterance_id"),
                        gender: field("gender"),
                        age_years: field("age_years"),
                        nationality: field("nationality"),
                        path: field("path"),
                    },
                ));
            }
            Ok(_) => bad.push(RowIssue {
                line: i + 1,
                message: "expected a JSON object".into(),
            }),
            Err(e) => bad.push(RowIssue {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    }
    let mut table = build_profiles(rows, regions)?;
    table.coverage.rows += bad.len();
    table.coverage.skipped += bad.len();
    table.row_errors.extend(bad);
    table.row_errors.sort_by_key(|r| r.line);
    Ok(table)
}

fn load_delimited_rows(text: &str, delimiter: u8, regions: &RegionMap) -> Result<MetadataTable> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let (id_col, gender_col, age_col, nat_col, path_col) = (
        col("utterance_id"),
        col("gender"),
        col("age_years"),
        col("nationality"),
        col("path"),
    );
    if id_col.is_none() {
        return Err(Error::Config("metadata manifest lacks an utterance_id column".into()));
    }
    let mut rows = Vec::new();
    let mut bad = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // header is line 1
        let line = i + 2;
        match record {
            Ok(rec) => {
                let get = |c: Option<usize>| c.and_then(|c| rec.get(c)).map(str::to_string);
                rows.push((
                    line,
                    MetadataRow {
                        utterance_id: get(id_col),
                        gender: get(gender_col),
                        age_years: get(age_col),
                        nationality: get(nat_col),
                        path: get(path_col),
                    },
                ));
            }
            Err(e) => bad.push(RowIssue {
                line,
                message: e.to_string(),
            }),
        }
    }
    let mut table = build_profiles(rows, regions)?;
    table.coverage.rows += bad.len();
    table.coverage.skipped += bad.len();
    table.row_errors.extend(bad);
    table.row_errors.sort_by_key(|r| r.line);
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(id: &str, gender: &str, age: &str, nat: &str) -> MetadataRow {
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        MetadataRow {
            utterance_id: opt(id),
            gender: opt(gender),
            age_years: opt(age),
            nationality: opt(nat),
            path: None,
        }
    }

    #[test]
    fn age_bins() {
        assert_eq!(bin_age(30).unwrap(), AgeBin::Age26To35);
        assert_eq!(bin_age(76).unwrap(), AgeBin::Age76Plus);
        assert_eq!(bin_age(25).unwrap(), AgeBin::Age18To25);
        assert_eq!(bin_age(1).unwrap(), AgeBin::Age1To7);
        assert_eq!(bin_age(200).unwrap(), AgeBin::Age76Plus);
        assert!(matches!(bin_age(0), Err(Error::InvalidAge(0))));
    }

    #[test]
    fn age_bins_match_brute_force_range_scan() {
        let ranges: [(u32, u32); 10] = [
            (1, 7),
            (8, 12),
            (13, 17),
            (18, 25),
            (26, 35),
            (36, 45),
            (46, 55),
            (56, 65),
            (66, 75),
            (76, u32::MAX),
        ];
        for age in 1..=120u32 {
            let hits: Vec<usize> = ranges
                .iter()
                .enumerate()
                .filter(|(_, (lo, hi))| (*lo..=*hi).contains(&age))
                .map(|(i, _)| i)
                .collect();
            assert_eq!(hits.len(), 1, "age {age}");
            assert_eq!(bin_age(age).unwrap().index(), hits[0], "age {age}");
        }
    }

    #[test]
    fn age_ranges_and_labels() {
        assert_eq!(AgeBin::Age26To35.range(), (26, Some(35)));
        assert_eq!(AgeBin::Age76Plus.range(), (76, None));
        assert_eq!(AgeBin::Age26To35.to_string(), "26–35");
        assert_eq!("26-35".parse::<AgeBin>().ok(), Some(AgeBin::Age26To35));
        assert_eq!("British / Irish".parse::<Region>().ok(), Some(Region::BritishIrish));
        assert_eq!(AgeBin::from_label("76+"), Some(AgeBin::Age76Plus));
    }

    #[test]
    fn region_lookup() {
        assert_eq!(map_region("USA").unwrap(), Region::NorthAmerican);
        assert_eq!(map_region("Ireland").unwrap(), Region::BritishIrish);
        assert_eq!(map_region("Mexico").unwrap(), Region::LatinHispanic);
        assert_eq!(map_region("  uk ").unwrap(), Region::BritishIrish);
        match map_region("Atlantis") {
            Err(Error::UnmappedNationality(s)) => assert_eq!(s, "Atlantis"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(RegionMap::builtin().version(), "v1");
    }

    #[test]
    fn region_map_rejects_unknown_class() {
        let err = "# region-map v2\nnarnia\tNarnian\n".parse::<RegionMap>();
        assert!(matches!(err, Err(Error::Row { line: 2, .. })));
    }

    #[test]
    fn every_region_class_is_reachable_from_builtin_table() {
        let reached: std::collections::BTreeSet<Region> =
            RegionMap::builtin().entries.values().copied().collect();
        assert_eq!(reached.len(), Region::all().len());
    }

    #[test]
    fn profiles_from_rows() {
        let rows = vec![
            (2, row("a", "male", "40", "UK")),
            (3, row("b", "female", "", "")),
        ];
        let table = build_profiles(rows, RegionMap::builtin()).unwrap();
        let a = &table.profiles["a"];
        assert_eq!(a.gender, Some(Gender::Male));
        assert_eq!(a.age, Some(AgeBin::Age36To45));
        assert_eq!(a.region, Some(Region::BritishIrish));
        let b = &table.profiles["b"];
        assert_eq!(b.gender, Some(Gender::Female));
        assert_eq!(b.age, None);
        assert_eq!(b.region, None);
        assert_eq!(table.coverage.gender, 2);
        assert_eq!(table.coverage.age, 1);
    }

    #[test]
    fn duplicate_ids_are_fatal() {
        let rows = vec![(2, row("a", "male", "", "")), (3, row("a", "female", "", ""))];
        assert!(matches!(
            build_profiles(rows, RegionMap::builtin()),
            Err(Error::DuplicateKey(id)) if id == "a"
        ));
    }

    #[test]
    fn malformed_rows_are_skipped_and_counted() {
        let rows = vec![
            (2, row("a", "robot", "", "")),
            (3, row("b", "male", "zero", "")),
            (4, row("c", "male", "0", "")),
            (5, row("d", "male", "30", "Atlantis")),
        ];
        let table = build_profiles(rows, RegionMap::builtin()).unwrap();
        assert_eq!(table.coverage.skipped, 3);
        assert_eq!(
            table.row_errors.iter().map(|r| r.line).collect::<Vec<_>>(),
            vec![2, 3, 4]
        );
        let d = &table.profiles["d"];
        assert_eq!(d.region, None);
        assert_eq!(table.coverage.unmapped_nationality, 1);
    }

    #[test]
    fn csv_and_jsonl_manifests() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("meta.csv");
        std::fs::write(
            &csv_path,
            "utterance_id,gender,age_years,nationality\na,male,40,UK\nb,female,,\n",
        )
        .unwrap();
        let t = load_speaker_metadata(&csv_path, RegionMap::builtin()).unwrap();
        assert_eq!(t.profiles.len(), 2);
        assert_eq!(t.profiles["a"].age, Some(AgeBin::Age36To45));

        let jsonl_path = dir.path().join("meta.jsonl");
        std::fs::write(
            &jsonl_path,
            "{\"utterance_id\":\"a\",\"gender\":\"female\",\"age_years\":30}\nnot json\n",
        )
        .unwrap();
        let t = load_speaker_metadata(&jsonl_path, RegionMap::builtin()).unwrap();
        assert_eq!(t.profiles["a"].age, Some(AgeBin::Age26To35));
        assert_eq!(t.row_errors.len(), 1);
        assert_eq!(t.row_errors[0].line, 2);
    }
}
