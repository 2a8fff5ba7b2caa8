//! On-disk bundles: a TOML manifest plus delimited tensor files.
//!
//! ```text
//! values.csv      id,label,<feature names...>     T consecutive rows per instance
//! attention.csv   id,label,event[,<feature names...>]
//! embedding.csv   id,x,y                          optional
//! attributes.csv  id,<attribute names...>         optional
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_dataset, AttentionTensor, FeatureKind, FeatureSpec, InstanceRecord, SequenceDataset};

pub const SCHEMA_VERSION: &str = "1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFeature {
    pub id: usize,
    pub name: String,
    pub min: f64,
    pub max: f64,
    #[serde(default)]
    pub kind: FeatureKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: String,
    pub dataset_path: PathBuf,
    pub attention_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes_path: Option<PathBuf>,
    pub time_steps: usize,
    pub feature_count: usize,
    pub class_count: usize,
    /// Attribute names, in column order of the attributes file.
    #[serde(default)]
    pub attributes: Vec<String>,
    pub features: Vec<ManifestFeature>,
}

impl DatasetManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        // check the version before the rest of the schema so old files get a clear error
        let raw: toml::Table = toml::from_str(&text).map_err(|e| toml_error(path, &text, e))?;
        match raw.get("schema_version") {
            Some(toml::Value::String(v)) if v == SCHEMA_VERSION => {}
            Some(v) => {
                let found = v.as_str().map_or_else(|| v.to_string(), str::to_owned);
                return Err(Error::VersionUnsupported { found, supported: SCHEMA_VERSION });
            }
            None => return Err(Error::SchemaMismatch { file: path.into(), message: "missing schema_version".into() }),
        }
        toml::from_str(&text).map_err(|e| toml_error(path, &text, e))
    }
}

fn toml_error(path: &Path, text: &str, e: toml::de::Error) -> Error {
    let line = e.span().map_or(0, |s| 1 + text[..s.start].matches('\n').count());
    Error::Parse { file: path.into(), record: line, field: String::new(), message: e.message().to_string() }
}

struct Table {
    path: PathBuf,
    headers: Vec<String>,
    /// (line number, fields)
    rows: Vec<(usize, Vec<String>)>,
}

/// Consecutive rows sharing one instance id.
type Block<'a> = (&'a str, Vec<&'a (usize, Vec<String>)>);

impl Table {
    fn read(path: PathBuf) -> Result<Self> {
        let file = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let parse = |e: csv::Error, path: &Path| {
            let record = e.position().map_or(0, |p| p.line() as usize);
            Error::Parse { file: path.into(), record, field: String::new(), message: e.to_string() }
        };
        let headers = rdr.headers().map_err(|e| parse(e, &path))?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| parse(e, &path))?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            rows.push((line, rec.iter().map(str::to_owned).collect()));
        }
        Ok(Self { path, headers, rows })
    }

    fn expect_headers(&self, expected: &[String]) -> Result<()> {
        if self.headers != expected {
            return Err(self.schema(format!("header {:?}, expected {:?}", self.headers, expected)));
        }
        Ok(())
    }

    fn schema(&self, message: String) -> Error {
        Error::SchemaMismatch { file: self.path.clone(), message }
    }

    fn real(&self, line: usize, col: usize, text: &str) -> Result<f64> {
        match text.trim().parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Parse {
                file: self.path.clone(),
                record: line,
                field: self.headers[col].clone(),
                message: format!("expected a finite real, got {text:?}"),
            }),
        }
    }

    fn label(&self, line: usize, text: &str) -> Result<usize> {
        text.trim().parse().map_err(|_| Error::Parse {
            file: self.path.clone(),
            record: line,
            field: "label".into(),
            message: format!("expected a class index, got {text:?}"),
        })
    }

    /// Groups rows into consecutive blocks sharing an id.
    fn blocks(&self) -> Vec<Block<'_>> {
        let mut out: Vec<Block<'_>> = Vec::new();
        for row in &self.rows {
            match out.last_mut() {
                Some((id, rows)) if *id == row.1[0] => rows.push(row),
                _ => out.push((&row.1[0], vec![row])),
            }
        }
        out
    }
}

/// Loads and validates a bundle. Nothing is returned unless every file parses
/// and every invariant holds.
pub fn load_bundle(manifest_path: &Path) -> Result<(SequenceDataset, AttentionTensor)> {
    let manifest = DatasetManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mpath = || manifest_path.to_path_buf();

    if manifest.features.len() != manifest.feature_count {
        return Err(Error::SchemaMismatch {
            file: mpath(),
            message: format!("feature_count {} but {} features listed", manifest.feature_count, manifest.features.len()),
        });
    }
    let features: Vec<FeatureSpec> = manifest
        .features
        .iter()
        .map(|f| FeatureSpec { id: f.id, name: f.name.clone(), value_min: f.min, value_max: f.max, kind: f.kind })
        .collect();
    let names: Vec<String> = features.iter().map(|f| f.name.clone()).collect();
    let t_len = manifest.time_steps;
    let f_len = features.len();

    let values = Table::read(base.join(&manifest.dataset_path))?;
    values.expect_headers(&[vec!["id".into(), "label".into()], names.clone()].concat())?;
    let mut instances = Vec::new();
    for (id, rows) in values.blocks() {
        if rows.len() != t_len {
            return Err(values.schema(format!("instance {id}: {} rows, expected {t_len}", rows.len())));
        }
        let label = values.label(rows[0].0, &rows[0].1[1])?;
        let mut v = Vec::with_capacity(t_len * f_len);
        for (line, fields) in rows {
            if values.label(*line, &fields[1])? != label {
                return Err(values.schema(format!("instance {id}: label changes within its rows")));
            }
            for (f, spec) in features.iter().enumerate() {
                let x = values.real(*line, f + 2, &fields[f + 2])?;
                if !spec.contains(x) {
                    return Err(Error::ValueOutOfRange {
                        file: values.path.clone(),
                        record: *line,
                        field: spec.name.clone(),
                        value: x,
                        min: spec.value_min,
                        max: spec.value_max,
                    });
                }
                v.push(x);
            }
        }
        instances.push(InstanceRecord {
            id: id.to_owned(),
            label,
            values: v,
            attributes: BTreeMap::new(),
            embedding: None,
        });
    }

    let attention = read_attention(&base.join(&manifest.attention_path), &instances, &names, t_len)?;

    if let Some(p) = &manifest.embedding_path {
        let table = Table::read(base.join(p))?;
        table.expect_headers(&["id".into(), "x".into(), "y".into()])?;
        let rows = by_id(&table, &instances)?;
        for (inst, (line, fields)) in instances.iter_mut().zip(rows) {
            inst.embedding = Some([table.real(line, 1, &fields[1])?, table.real(line, 2, &fields[2])?]);
        }
    }
    if let Some(p) = &manifest.attributes_path {
        let table = Table::read(base.join(p))?;
        table.expect_headers(&[vec!["id".into()], manifest.attributes.clone()].concat())?;
        let rows = by_id(&table, &instances)?;
        for (inst, (_, fields)) in instances.iter_mut().zip(rows) {
            inst.attributes = manifest.attributes.iter().cloned().zip(fields[1..].iter().cloned()).collect();
        }
    } else if !manifest.attributes.is_empty() {
        return Err(Error::SchemaMismatch { file: mpath(), message: "attributes declared without attributes_path".into() });
    }

    let dataset = SequenceDataset { time_steps: t_len, class_count: manifest.class_count, features, instances };
    let report = validate_dataset(&dataset, &attention);
    if !report.is_valid() {
        return Err(Error::InvalidDataset(report.violations));
    }
    Ok((dataset, attention))
}

/// One row per instance, in dataset order.
fn by_id(table: &Table, instances: &[InstanceRecord]) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows: BTreeMap<&str, &(usize, Vec<String>)> = BTreeMap::new();
    for row in &table.rows {
        if rows.insert(&row.1[0], row).is_some() {
            return Err(table.schema(format!("instance {} appears twice", row.1[0])));
        }
    }
    if rows.len() != instances.len() {
        return Err(table.schema(format!("{} rows, expected {}", rows.len(), instances.len())));
    }
    instances
        .iter()
        .map(|i| rows.get(i.id.as_str()).map(|r| (*r).clone()).ok_or_else(|| table.schema(format!("instance {} missing", i.id))))
        .collect()
}

fn read_attention(path: &Path, instances: &[InstanceRecord], names: &[String], t_len: usize) -> Result<AttentionTensor> {
    let table = Table::read(path.to_path_buf())?;
    let base: Vec<String> = vec!["id".into(), "label".into(), "event".into()];
    let with_features = table.headers.len() > base.len();
    table.expect_headers(&if with_features { [base, names.to_vec()].concat() } else { base })?;

    let blocks = table.blocks();
    if blocks.len() != instances.len() {
        return Err(table.schema(format!("{} instances, expected {}", blocks.len(), instances.len())));
    }
    let mut event_level = Vec::with_capacity(instances.len());
    let mut feature_level = Vec::with_capacity(instances.len());
    for ((id, rows), inst) in blocks.into_iter().zip(instances) {
        if id != inst.id {
            return Err(table.schema(format!("instance {id} where {} was expected", inst.id)));
        }
        if rows.len() != t_len {
            return Err(table.schema(format!("instance {id}: {} rows, expected {t_len}", rows.len())));
        }
        let mut ev = Vec::with_capacity(t_len);
        let mut fl = Vec::new();
        for (line, fields) in rows {
            if table.label(*line, &fields[1])? != inst.label {
                return Err(table.schema(format!("instance {id}: label disagrees with the values file")));
            }
            ev.push(unit(&table, *line, 2, &fields[2])?);
            if with_features {
                for (c, v) in fields.iter().enumerate().skip(3) {
                    fl.push(unit(&table, *line, c, v)?);
                }
            }
        }
        event_level.push(ev);
        feature_level.push(fl);
    }
    Ok(AttentionTensor { event_level, feature_level: with_features.then_some(feature_level) })
}

fn unit(table: &Table, line: usize, col: usize, text: &str) -> Result<f64> {
    let v = table.real(line, col, text)?;
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::ValueOutOfRange {
            file: table.path.clone(),
            record: line,
            field: table.headers[col].clone(),
            value: v,
            min: 0.0,
            max: 1.0,
        });
    }
    Ok(v)
}

/// Writes `dataset` and `attention` as a canonical bundle in `dir` and
/// returns the manifest path.
pub fn write_bundle(dir: &Path, dataset: &SequenceDataset, attention: &AttentionTensor) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let names: Vec<String> = dataset.features.iter().map(|f| f.name.clone()).collect();
    let f_len = names.len();
    let attributes: Vec<String> = dataset.instances.first().map_or_else(Vec::new, |i| i.attributes.keys().cloned().collect());

    let mut rows = vec![[vec!["id".into(), "label".into()], names.clone()].concat()];
    for inst in &dataset.instances {
        for t in 0..dataset.time_steps {
            let mut row = vec![inst.id.clone(), inst.label.to_string()];
            row.extend(inst.values[t * f_len..(t + 1) * f_len].iter().map(f64::to_string));
            rows.push(row);
        }
    }
    write_csv(&dir.join("values.csv"), &rows)?;

    let mut header = vec!["id".into(), "label".into(), "event".into()];
    if attention.feature_level.is_some() {
        header.extend(names.iter().cloned());
    }
    let mut rows = vec![header];
    for (i, inst) in dataset.instances.iter().enumerate() {
        for t in 0..dataset.time_steps {
            let mut row = vec![inst.id.clone(), inst.label.to_string(), attention.event_level[i][t].to_string()];
            if let Some(fl) = &attention.feature_level {
                row.extend(fl[i][t * f_len..(t + 1) * f_len].iter().map(f64::to_string));
            }
            rows.push(row);
        }
    }
    write_csv(&dir.join("attention.csv"), &rows)?;

    let embedding_path = dataset.has_embedding().then(|| PathBuf::from("embedding.csv"));
    if let Some(p) = &embedding_path {
        let mut rows = vec![vec!["id".into(), "x".into(), "y".into()]];
        for inst in &dataset.instances {
            let [x, y] = inst.embedding.unwrap_or_default();
            rows.push(vec![inst.id.clone(), x.to_string(), y.to_string()]);
        }
        write_csv(&dir.join(p), &rows)?;
    }
    let attributes_path = (!attributes.is_empty()).then(|| PathBuf::from("attributes.csv"));
    if let Some(p) = &attributes_path {
        let mut rows = vec![[vec!["id".into()], attributes.clone()].concat()];
        for inst in &dataset.instances {
            rows.push([vec![inst.id.clone()], inst.attributes.values().cloned().collect()].concat());
        }
        write_csv(&dir.join(p), &rows)?;
    }

    let manifest = DatasetManifest {
        schema_version: SCHEMA_VERSION.into(),
        dataset_path: "values.csv".into(),
        attention_path: "attention.csv".into(),
        embedding_path,
        attributes_path,
        time_steps: dataset.time_steps,
        feature_count: f_len,
        class_count: dataset.class_count,
        attributes,
        features: dataset
            .features
            .iter()
            .map(|f| ManifestFeature { id: f.id, name: f.name.clone(), min: f.value_min, max: f.value_max, kind: f.kind })
            .collect(),
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::InvalidParams(e.to_string()))?;
    write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.write_record(r).map_err(|e| Error::io(path, e.into()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Serialises `result` as pretty JSON with a trailing newline. Field order is
/// fixed by the types, so equal results give byte-identical files.
pub fn export_summary<T: Serialize>(result: &T, path: &Path) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(result)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::toy;

    fn bundle() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let (d, a) = toy();
        let p = write_bundle(dir.path(), &d, &a).unwrap();
        (dir, p)
    }

    #[test]
    fn toy_round_trip() {
        let (_dir, p) = bundle();
        let (d, a) = load_bundle(&p).unwrap();
        let (d0, a0) = toy();
        assert_eq!((d.time_steps, d.feature_count(), d.class_count, d.instances.len()), (4, 2, 2, 3));
        assert_eq!(d, d0);
        assert_eq!(a, a0);
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let (dir, p) = bundle();
        let before: Vec<Vec<u8>> = ["manifest.toml", "values.csv", "attention.csv"].iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect();
        let (d, a) = load_bundle(&p).unwrap();
        write_bundle(dir.path(), &d, &a).unwrap();
        let after: Vec<Vec<u8>> = ["manifest.toml", "values.csv", "attention.csv"].iter().map(|f| fs::read(dir.path().join(f)).unwrap()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn short_attention_names_instance() {
        let (dir, p) = bundle();
        let path = dir.path().join("attention.csv");
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        // drop the last row of the second instance
        let kept: Vec<&str> = lines.iter().enumerate().filter(|&(i, _)| i != 8).map(|(_, l)| *l).collect();
        fs::write(&path, kept.join("\n") + "\n").unwrap();
        match load_bundle(&p) {
            Err(Error::SchemaMismatch { message, .. }) => assert!(message.contains("instance b"), "{message}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file() {
        let (dir, p) = bundle();
        fs::remove_file(dir.path().join("values.csv")).unwrap();
        assert!(matches!(load_bundle(&p), Err(Error::MissingFile(f)) if f.ends_with("values.csv")));
        assert!(matches!(load_bundle(&dir.path().join("nope.toml")), Err(Error::MissingFile(_))));
    }

    #[test]
    fn version_and_shape_checks() {
        let (dir, p) = bundle();
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, text.replace("schema_version = \"1\"", "schema_version = \"9\"")).unwrap();
        assert!(matches!(load_bundle(&p), Err(Error::VersionUnsupported { .. })));
        fs::write(&p, text.replace("time_steps = 4", "time_steps = 5")).unwrap();
        assert!(matches!(load_bundle(&p), Err(Error::SchemaMismatch { .. })));
        drop(dir);
    }

    #[test]
    fn parse_errors_carry_location() {
        let (dir, p) = bundle();
        let path = dir.path().join("values.csv");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        let cols: Vec<&str> = lines[3].split(',').collect();
        lines[3] = format!("{},{},,{}", cols[0], cols[1], cols[3]);
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        match load_bundle(&p) {
            Err(Error::Parse { file, record, field, .. }) => {
                assert!(file.ends_with("values.csv"));
                assert_eq!(record, 4);
                assert!(!field.is_empty());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn out_of_range_value() {
        let (dir, p) = bundle();
        let path = dir.path().join("attention.csv");
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_owned).collect();
        let cols: Vec<String> = lines[1].split(',').map(str::to_owned).collect();
        lines[1] = format!("{},{},1.5{}", cols[0], cols[1], cols[3..].iter().map(|c| format!(",{c}")).collect::<String>());
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        assert!(matches!(load_bundle(&p), Err(Error::ValueOutOfRange { value, .. }) if value == 1.5));
    }

    #[test]
    fn export_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let v = serde_json::json!({"clusters": [], "params": {"seed": 3}});
        let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
        export_summary(&v, &a).unwrap();
        export_summary(&v, &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }
}
