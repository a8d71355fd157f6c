//! Text file formats: metadata, embeddings, distance matrices, config,
//! dataset bundles and result tables.
//!
//! Every file is comma-delimited UTF-8 with a mandatory header row.
//! Reported line numbers are 1-based and count the header.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::{CmcCurve, DEFAULT_RANKS};
use crate::flow::build_flow;
use crate::model::{
    Dataset, FeatureBank, FeatureSpace, FlowSet, Metric, PedestrianRecord, PipelineConfig, ScoreMatrix,
};
use crate::rerank::QueryRanking;
use crate::saliency::{RhoPoint, SaliencyTable};

pub const METADATA_HEADER: [&str; 6] = ["id", "camera", "t", "vx", "vy", "true_match"];
pub const PROBE_FILE: &str = "probe.csv";
pub const GALLERY_FILE: &str = "gallery.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const BASELINE_FILE: &str = "baseline_distances.csv";
pub const CONFIG_FILE: &str = "config.txt";

pub fn embedding_file(feature: &str, camera: &str) -> String {
    format!("emb_{feature}_{camera}.csv")
}

fn open(path: &Path) -> Result<fs::File> {
    fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

/// Reads all rows, returning the header and the data rows with their line
/// numbers. Blank lines are skipped by the csv reader.
fn rows<R: Read>(input: R, source: &str) -> Result<(csv::StringRecord, Vec<(u64, csv::StringRecord)>)> {
    let mut rdr = reader(input);
    let mut out = Vec::new();
    let mut header = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(e, source))?;
        let line = rec.position().map_or(0, |p| p.line());
        if header.is_none() {
            header = Some(rec);
        } else {
            out.push((line, rec));
        }
    }
    let header = header.ok_or_else(|| Error::Input(format!("{source}: missing header row")))?;
    Ok((header, out))
}

fn csv_error(e: csv::Error, source: &str) -> Error {
    let line = e.position().map(|p| p.line());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(source, io),
        kind => match line {
            Some(l) => Error::Input(format!("{source}:{l}: {kind:?}")),
            None => Error::Input(format!("{source}: {kind:?}")),
        },
    }
}

fn field<T: FromStr>(rec: &csv::StringRecord, col: usize, name: &str, source: &str, line: u64) -> Result<T> {
    let raw = rec.get(col).unwrap_or("");
    raw.parse()
        .map_err(|_| Error::Input(format!("{source}:{line}: column `{name}`: cannot parse `{raw}`")))
}

fn finite(raw: &str, source: &str, line: u64, col: usize) -> Result<f64> {
    match raw.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(Error::Input(format!("{source}:{line}: column {}: non-finite value `{raw}`", col + 1))),
        Err(_) => Err(Error::Input(format!("{source}:{line}: column {}: not a number `{raw}`", col + 1))),
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

pub fn parse_metadata(path: impl AsRef<Path>) -> Result<Vec<PedestrianRecord>> {
    let path = path.as_ref();
    read_metadata(open(path)?, &display(path))
}

/// Parses `id,camera,t,vx,vy[,true_match]` rows. A blank `true_match` means
/// no ground truth.
pub fn read_metadata<R: Read>(input: R, source: &str) -> Result<Vec<PedestrianRecord>> {
    let (header, data) = rows(input, source)?;
    let names: Vec<&str> = header.iter().collect();
    let with_truth = match names.as_slice() {
        h if h == &METADATA_HEADER[..5] => false,
        h if h == &METADATA_HEADER[..] => true,
        _ => {
            return Err(Error::Input(format!(
                "{source}:1: expected header `{}` with optional `,true_match`, found `{}`",
                METADATA_HEADER[..5].join(","),
                names.join(",")
            )))
        }
    };
    let width = if with_truth { 6 } else { 5 };
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(data.len());
    for (line, rec) in data {
        if rec.len() != width {
            return Err(Error::Input(format!(
                "{source}:{line}: expected {width} columns, found {}",
                rec.len()
            )));
        }
        let id = rec[0].to_string();
        if id.is_empty() {
            return Err(Error::Input(format!("{source}:{line}: empty id")));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Input(format!("{source}:{line}: duplicate id `{id}`")));
        }
        let t: u64 = field(&rec, 2, "t", source, line)?;
        let vx = finite(&rec[3], source, line, 3)?;
        let vy = finite(&rec[4], source, line, 4)?;
        let mut r = PedestrianRecord::new(id, &rec[1], t).with_velocity([vx, vy]);
        if with_truth && !rec[5].is_empty() {
            r = r.with_true_match(&rec[5]);
        }
        out.push(r);
    }
    Ok(out)
}

pub fn write_metadata(path: impl AsRef<Path>, records: &[PedestrianRecord]) -> Result<()> {
    let mut s = METADATA_HEADER.join(",");
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.id,
            r.camera,
            r.entering_frame,
            r.velocity[0],
            r.velocity[1],
            r.true_match.as_deref().unwrap_or("")
        );
    }
    write_text(path.as_ref(), &s)
}

pub fn parse_embeddings(path: impl AsRef<Path>, expected_dim: usize) -> Result<BTreeMap<String, Vec<f64>>> {
    let path = path.as_ref();
    read_embeddings(open(path)?, expected_dim, &display(path))
}

/// Parses rows of an id followed by `expected_dim` finite reals.
pub fn read_embeddings<R: Read>(input: R, expected_dim: usize, source: &str) -> Result<BTreeMap<String, Vec<f64>>> {
    let (header, data) = rows(input, source)?;
    if header.get(0) != Some("id") {
        return Err(Error::Input(format!("{source}:1: first header column must be `id`")));
    }
    if header.len() != expected_dim + 1 {
        return Err(Error::Input(format!(
            "{source}:1: header declares {} dimensions, expected {expected_dim}",
            header.len() - 1
        )));
    }
    let mut out = BTreeMap::new();
    for (line, rec) in data {
        if rec.len() != expected_dim + 1 {
            return Err(Error::Input(format!(
                "{source}:{line}: dimension mismatch: {} values, expected {expected_dim}",
                rec.len().saturating_sub(1)
            )));
        }
        let v = (1..rec.len())
            .map(|c| finite(&rec[c], source, line, c))
            .collect::<Result<Vec<_>>>()?;
        let id = rec[0].to_string();
        if out.insert(id.clone(), v).is_some() {
            return Err(Error::Input(format!("{source}:{line}: duplicate id `{id}`")));
        }
    }
    Ok(out)
}

/// Writes one camera's table of `space`, rows sorted by id.
pub fn write_embeddings(path: impl AsRef<Path>, space: &FeatureSpace, camera: &str) -> Result<()> {
    let mut s = String::from("id");
    for d in 0..space.dim() {
        let _ = write!(s, ",d{d}");
    }
    s.push('\n');
    if let Some(table) = space.table(camera) {
        let mut ids: Vec<&String> = table.keys().collect();
        ids.sort();
        for id in ids {
            s.push_str(id);
            for x in &table[id] {
                let _ = write!(s, ",{x}");
            }
            s.push('\n');
        }
    }
    write_text(path.as_ref(), &s)
}

pub fn parse_distance_matrix(path: impl AsRef<Path>) -> Result<ScoreMatrix> {
    let path = path.as_ref();
    read_distance_matrix(open(path)?, &display(path))
}

/// Header row lists gallery ids after a leading label cell; each data row is
/// a probe id followed by its dissimilarities.
pub fn read_distance_matrix<R: Read>(input: R, source: &str) -> Result<ScoreMatrix> {
    let (header, data) = rows(input, source)?;
    let gallery: Vec<String> = header.iter().skip(1).map(String::from).collect();
    let mut probe = Vec::with_capacity(data.len());
    let mut values = Vec::with_capacity(data.len() * gallery.len());
    for (line, rec) in data {
        if rec.len() != gallery.len() + 1 {
            return Err(Error::Input(format!(
                "{source}:{line}: expected {} columns, found {}",
                gallery.len() + 1,
                rec.len()
            )));
        }
        probe.push(rec[0].to_string());
        for c in 1..rec.len() {
            values.push(finite(&rec[c], source, line, c)?);
        }
    }
    ScoreMatrix::new(probe, gallery, values).map_err(|e| Error::Input(format!("{source}: {e}")))
}

pub fn write_distance_matrix(path: impl AsRef<Path>, m: &ScoreMatrix) -> Result<()> {
    let mut s = String::from("probe");
    for g in m.gallery_ids() {
        let _ = write!(s, ",{g}");
    }
    s.push('\n');
    for (i, p) in m.probe_ids().iter().enumerate() {
        s.push_str(p);
        for x in m.row(i) {
            let _ = write!(s, ",{x}");
        }
        s.push('\n');
    }
    write_text(path.as_ref(), &s)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn config_value<T: FromStr>(key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| Error::config(key, format!("cannot parse `{raw}`: {e}")))
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// ignored. Keys absent from the text keep their defaults.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let mut c = PipelineConfig::default();
    let mut seen = HashSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", n + 1), format!("expected key=value, found `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::config(key, "given more than once"));
        }
        match key {
            "k_nn" => c.k_nn = config_value(key, value)?,
            "tau" => c.tau = config_value(key, value)?,
            "num_keys" => c.num_keys = config_value(key, value)?,
            "angle_threshold" => {
                c.angle_threshold = match value {
                    "off" | "none" => None,
                    v => Some(config_value(key, v)?),
                }
            }
            "speed_tolerance" => c.speed_tolerance = config_value(key, value)?,
            "weight_combine" => c.weight_combine = config_value(key, value)?,
            "direction_map" => c.direction_map = config_value(key, value)?,
            "key_scope" => c.key_scope = config_value(key, value)?,
            "baseline_feature" => c.baseline_feature = Some(value.to_string()),
            "seed" => c.seed = config_value(key, value)?,
            k => match k.strip_prefix("rho.") {
                Some(f) if !f.is_empty() => {
                    c.rho_per_feature.insert(f.to_string(), config_value(key, value)?);
                }
                _ => return Err(Error::config(k, "unknown key")),
            },
        }
    }
    c.validate()?;
    Ok(c)
}

/// Inverse of [`parse_config`]; every key is written.
pub fn format_config(c: &PipelineConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "k_nn = {}", c.k_nn);
    let _ = writeln!(s, "tau = {}", c.tau);
    let _ = writeln!(s, "num_keys = {}", c.num_keys);
    match c.angle_threshold {
        Some(a) => {
            let _ = writeln!(s, "angle_threshold = {a}");
        }
        None => s.push_str("angle_threshold = off\n"),
    }
    let _ = writeln!(s, "speed_tolerance = {}", c.speed_tolerance);
    let _ = writeln!(s, "weight_combine = {}", c.weight_combine);
    let _ = writeln!(s, "direction_map = {}", c.direction_map);
    let _ = writeln!(s, "key_scope = {}", c.key_scope);
    if let Some(b) = &c.baseline_feature {
        let _ = writeln!(s, "baseline_feature = {b}");
    }
    for (f, rho) in &c.rho_per_feature {
        let _ = writeln!(s, "rho.{f} = {rho}");
    }
    let _ = writeln!(s, "seed = {}", c.seed);
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// A dataset as stored on disk, with its optional pipeline config.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub dataset: Dataset,
    pub config: Option<PipelineConfig>,
}

/// Writes `probe.csv`, `gallery.csv`, `features.csv`, one embedding file per
/// feature and camera, `baseline_distances.csv` when the bank carries a
/// precomputed matrix, and `config.txt` when a config is given.
pub fn write_bundle(dir: impl AsRef<Path>, dataset: &Dataset, config: Option<&PipelineConfig>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: String| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_metadata(put(PROBE_FILE.into()), dataset.probe.members())?;
    write_metadata(put(GALLERY_FILE.into()), dataset.gallery.members())?;
    let bank = &dataset.bank;
    let mut features = String::from("name,dim,metric,rho,baseline\n");
    for space in bank.spaces() {
        let _ = writeln!(
            features,
            "{},{},{},{},{}",
            space.name(),
            space.dim(),
            space.metric(),
            space.rho(),
            space.name() == bank.baseline()
        );
        for camera in [dataset.probe.camera(), dataset.gallery.camera()] {
            write_embeddings(put(embedding_file(space.name(), camera)), space, camera)?;
        }
    }
    write_text(&put(FEATURES_FILE.into()), &features)?;
    if let Some(m) = bank.baseline_matrix() {
        write_distance_matrix(put(BASELINE_FILE.into()), m)?;
    }
    if let Some(c) = config {
        write_text(&put(CONFIG_FILE.into()), &format_config(c))?;
    }
    Ok(written)
}

fn flow_from(path: &Path) -> Result<FlowSet> {
    let records = parse_metadata(path)?;
    let camera = records
        .first()
        .map(|r| r.camera.clone())
        .ok_or_else(|| Error::Input(format!("{}: no records", path.display())))?;
    build_flow(records, &camera).map_err(|e| Error::Input(format!("{}: {e}", path.display())))
}

/// Reads a directory written by [`write_bundle`]. Missing embeddings are
/// not an error here; see [`crate::model::validate_inputs`].
pub fn read_bundle(dir: impl AsRef<Path>) -> Result<Bundle> {
    let dir = dir.as_ref();
    let probe = flow_from(&dir.join(PROBE_FILE))?;
    let gallery = flow_from(&dir.join(GALLERY_FILE))?;

    let fpath = dir.join(FEATURES_FILE);
    let source = display(&fpath);
    let (header, data) = rows(open(&fpath)?, &source)?;
    let expected = ["name", "dim", "metric", "rho", "baseline"];
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(Error::Input(format!("{source}:1: expected header `{}`", expected.join(","))));
    }
    let mut spaces = Vec::new();
    let mut baseline = None;
    for (line, rec) in data {
        if rec.len() != expected.len() {
            return Err(Error::Input(format!("{source}:{line}: expected 5 columns, found {}", rec.len())));
        }
        let name = rec[0].to_string();
        let dim: usize = field(&rec, 1, "dim", &source, line)?;
        let metric: Metric = field(&rec, 2, "metric", &source, line)?;
        let rho: f64 = field(&rec, 3, "rho", &source, line)?;
        if field::<bool>(&rec, 4, "baseline", &source, line)? {
            if baseline.is_some() {
                return Err(Error::Input(format!("{source}:{line}: second baseline feature")));
            }
            baseline = Some(name.clone());
        }
        let mut space =
            FeatureSpace::new(name.clone(), dim, metric, rho).map_err(|e| Error::Input(format!("{source}:{line}: {e}")))?;
        for camera in [probe.camera(), gallery.camera()] {
            for (id, v) in parse_embeddings(dir.join(embedding_file(&name, camera)), dim)? {
                space.insert(camera, id, v);
            }
        }
        spaces.push(space);
    }
    let baseline = match baseline {
        Some(b) => b,
        None => spaces
            .first()
            .map(|s| s.name().to_string())
            .ok_or_else(|| Error::Input(format!("{source}: no feature spaces")))?,
    };
    let mut bank = FeatureBank::new(spaces, baseline)?;
    let bpath = dir.join(BASELINE_FILE);
    if bpath.exists() {
        bank = bank.with_baseline_matrix(parse_distance_matrix(&bpath)?);
    }
    let cpath = dir.join(CONFIG_FILE);
    let config = if cpath.exists() { Some(load_config(&cpath)?) } else { None };
    if let Some(b) = config.as_ref().and_then(|c| c.baseline_feature.as_ref()) {
        bank = bank.with_baseline(b.clone())?;
    }
    Ok(Bundle {
        dataset: Dataset { probe, gallery, bank },
        config,
    })
}

pub fn format_cmc(curve: &CmcCurve) -> String {
    let mut s = String::from("rank,accuracy\n");
    for (i, a) in curve.accuracy.iter().enumerate() {
        let _ = writeln!(s, "{},{a:.6}", i + 1);
    }
    s
}

pub fn format_summary(curves: &[(&str, &CmcCurve)]) -> String {
    let mut s = String::from("method");
    for r in DEFAULT_RANKS {
        let _ = write!(s, ",r{r}");
    }
    s.push('\n');
    for (name, c) in curves {
        s.push_str(name);
        for r in DEFAULT_RANKS {
            let _ = write!(s, ",{:.6}", c.at(r));
        }
        s.push('\n');
    }
    s
}

pub fn format_rho_sweep(points: &[RhoPoint]) -> String {
    let mut s = String::from("rho,sigma,n_keys\n");
    for p in points {
        let _ = writeln!(s, "{:.6},{:.6},{}", p.rho, p.sigma, p.n_keys);
    }
    s
}

pub fn format_saliency(tables: &[SaliencyTable], rho: &[f64]) -> String {
    let mut s = String::from("feature,id,raw,score,key\n");
    for (t, r) in tables.iter().zip(rho) {
        for e in &t.entries {
            let _ = writeln!(s, "{},{},{:.6},{:.6},{}", t.feature, e.id, e.raw, e.score, e.score >= *r);
        }
    }
    s
}

pub fn format_rankings(rankings: &[QueryRanking]) -> String {
    let mut s = String::from("query,method,rank,candidate,score\n");
    for q in rankings {
        for (method, list) in [("baseline", &q.baseline), ("key_aided", &q.reranked)] {
            for (i, c) in list.iter().enumerate() {
                let _ = writeln!(s, "{},{method},{},{},{:.6}", q.query, i + 1, c.id, c.score);
            }
        }
    }
    s
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 420.0;
const SVG_PAD: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Static line chart of CMC curves over ranks 1..=max length.
pub fn format_cmc_svg(curves: &[(&str, &CmcCurve)]) -> String {
    let n = curves.iter().map(|(_, c)| c.len()).max().unwrap_or(1).max(2);
    let x = |r: usize| SVG_PAD + (r - 1) as f64 / (n - 1) as f64 * (SVG_W - 2.0 * SVG_PAD);
    let y = |a: f64| SVG_H - SVG_PAD - a * (SVG_H - 2.0 * SVG_PAD);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    let _ = writeln!(s, "<rect width=\"{SVG_W}\" height=\"{SVG_H}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<polyline points=\"{x0:.2},{y1:.2} {x0:.2},{y0:.2} {x1:.2},{y0:.2}\" fill=\"none\" stroke=\"black\"/>",
        x0 = x(1),
        x1 = x(n),
        y0 = y(0.0),
        y1 = y(1.0)
    );
    for tick in 0..=4 {
        let a = tick as f64 / 4.0;
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{:.0}%</text>",
            SVG_PAD - 6.0,
            y(a) + 4.0,
            a * 100.0
        );
    }
    let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">rank</text>", SVG_W / 2.0, SVG_H - 12.0);
    let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">1</text>", x(1), y(0.0) + 16.0);
    let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{n}</text>", x(n), y(0.0) + 16.0);
    for (i, (name, c)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c
            .accuracy
            .iter()
            .enumerate()
            .map(|(r, a)| format!("{:.2},{:.2}", x(r + 1), y(*a)))
            .collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            pts.join(" ")
        );
        let ly = SVG_PAD + 16.0 * i as f64;
        let _ = writeln!(
            s,
            "<text x=\"{:.2}\" y=\"{ly:.2}\" fill=\"{color}\" text-anchor=\"end\">{name} r1={:.1}%</text>",
            SVG_W - SVG_PAD,
            100.0 * c.at(1)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `cmc.csv` (the first curve), `cmc_<method>.csv` for every curve,
/// `summary.csv`, `cmc.svg`, and `rho_sweep.csv` when a sweep is given.
pub fn emit_results(
    out_dir: impl AsRef<Path>,
    curves: &[(&str, &CmcCurve)],
    sweep: Option<&[RhoPoint]>,
) -> Result<Vec<PathBuf>> {
    let dir = out_dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files: Vec<(String, String)> = Vec::new();
    if let Some((_, primary)) = curves.first() {
        files.push(("cmc.csv".into(), format_cmc(primary)));
        for (name, c) in curves {
            files.push((format!("cmc_{name}.csv"), format_cmc(c)));
        }
        files.push(("summary.csv".into(), format_summary(curves)));
        files.push(("cmc.svg".into(), format_cmc_svg(curves)));
    }
    if let Some(points) = sweep {
        files.push(("rho_sweep.csv".into(), format_rho_sweep(points)));
    }
    files
        .into_iter()
        .map(|(name, text)| {
            let p = dir.join(name);
            write_text(&p, &text)?;
            Ok(p)
        })
        .collect()
}
