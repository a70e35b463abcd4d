//! Run-table ingestion and synthetic sweep generation.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::RunRecord;
use crate::laws::{LawSpec, RunPoint};

pub const NATIVE_SCHEMA: &str = "native-v1";
pub const MUENNIGHOFF_SCHEMA: &str = "muennighoff-v1";
pub const SYNTHETIC_SCHEMA: &str = "synthetic-v1";

/// Where a dataset came from and what was filtered out on the way in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub schema_version: String,
    pub filter: String,
}

/// A row that was read but not accepted. `row` is the 1-based file line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub row: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<RunRecord>,
    pub provenance: Provenance,
    /// Data rows read from the source; always `records.len() + rejected.len()`.
    pub rows_read: usize,
    pub rejected: Vec<Rejection>,
}

impl Dataset {
    pub fn from_records(records: Vec<RunRecord>, provenance: Provenance) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            r.validate().map_err(|e| Error::InvariantViolation { row: i + 1, msg: e.to_string() })?;
        }
        Ok(Self { rows_read: records.len(), records, provenance, rejected: Vec::new() })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn single_epoch(&self) -> Vec<RunRecord> {
        self.records.iter().filter(|r| r.point.is_single_epoch()).cloned().collect()
    }

    pub fn multi_epoch(&self) -> Vec<RunRecord> {
        self.records.iter().filter(|r| !r.point.is_single_epoch()).cloned().collect()
    }
}

fn parse_field(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim()
        .parse::<f64>()
        .map_err(|e| Error::Parse { row, msg: format!("column `{column}`: `{raw}`: {e}") })
}

fn check_row(point: RunPoint, loss: f64, group: String, row: usize) -> Result<RunRecord> {
    RunRecord::new(point, loss, group).map_err(|e| Error::InvariantViolation { row, msg: e.to_string() })
}

/// Reads the native run table from a file. See [`read_native_csv`].
pub fn load_native_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_native_csv(file, &path.display().to_string())
}

/// Parses the native schema: `n_params,u_tokens,epochs,loss_nats,group`.
/// `group` is optional. A `perplexity` column may stand in for `loss_nats`;
/// when `loss_nats` is absent (or empty in a row) the loss is
/// `ln(perplexity)`. Any malformed or invalid row is an error naming the
/// file line.
pub fn read_native_csv<R: Read>(reader: R, source: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();

    const KNOWN: [&str; 6] = ["n_params", "u_tokens", "epochs", "loss_nats", "group", "perplexity"];
    if let Some(unknown) = headers.iter().find(|h| !KNOWN.contains(h)) {
        return Err(Error::SchemaMismatch(format!("unknown column `{unknown}`")));
    }
    for required in ["n_params", "u_tokens", "epochs"] {
        if !index.contains_key(required) {
            return Err(Error::SchemaMismatch(format!("missing column `{required}`")));
        }
    }
    let loss_col = index.get("loss_nats").copied();
    let ppl_col = index.get("perplexity").copied();
    if loss_col.is_none() && ppl_col.is_none() {
        return Err(Error::SchemaMismatch("need a `loss_nats` or `perplexity` column".into()));
    }

    let mut records = Vec::new();
    for result in rdr.records() {
        let rec = result?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let get = |name: &str| rec.get(index[name]).unwrap_or("");
        let n = parse_field(get("n_params"), row, "n_params")?;
        let u = parse_field(get("u_tokens"), row, "u_tokens")?;
        let epochs = parse_field(get("epochs"), row, "epochs")?;
        let loss_raw = loss_col.and_then(|i| rec.get(i)).unwrap_or("");
        let loss = if !loss_raw.is_empty() {
            parse_field(loss_raw, row, "loss_nats")?
        } else {
            match ppl_col.and_then(|i| rec.get(i)).filter(|s| !s.is_empty()) {
                Some(p) => parse_field(p, row, "perplexity")?.ln(),
                None => return Err(Error::Parse { row, msg: "no loss_nats or perplexity value".into() }),
            }
        };
        let group = index.get("group").and_then(|&i| rec.get(i)).unwrap_or("").to_string();
        let point = RunPoint { n_params: n, u_tokens: u, epochs };
        records.push(check_row(point, loss, group, row)?);
    }

    Ok(Dataset {
        rows_read: records.len(),
        records,
        provenance: Provenance {
            source: source.to_string(),
            schema_version: NATIVE_SCHEMA.into(),
            filter: "none".into(),
        },
        rejected: Vec::new(),
    })
}

/// Writes records in the native schema (`loss_nats` column, full precision).
pub fn write_native_csv<W: Write>(records: &[RunRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["n_params", "u_tokens", "epochs", "loss_nats", "group"])?;
    for r in records {
        w.write_record([
            r.point.n_params.to_string(),
            r.point.u_tokens.to_string(),
            r.point.epochs.to_string(),
            r.loss.to_string(),
            r.group.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_native_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_native_csv(records, std::io::BufWriter::new(file))
}

/// Column aliases accepted for the public data-constrained run table
/// (matched case-insensitively).
const MUENNIGHOFF_PARAMS: [&str; 5] = ["params", "parameters", "n_params", "model_params", "n"];
const MUENNIGHOFF_UNIQUE: [&str; 6] = ["unique_tokens", "unique_data", "u_tokens", "u_d", "unique", "data_unique"];
const MUENNIGHOFF_EPOCHS: [&str; 2] = ["epochs", "epoch"];
const MUENNIGHOFF_TOKENS: [&str; 4] = ["tokens", "total_tokens", "d", "data"];
const MUENNIGHOFF_LOSS: [&str; 6] = ["final_loss", "loss", "val_loss", "validation_loss", "final_test_loss", "test_loss"];

fn find_column(headers: &[String], aliases: &[&str]) -> Option<usize> {
    aliases.iter().find_map(|a| headers.iter().position(|h| h == a))
}

pub fn load_muennighoff_csv(path: impl AsRef<Path>, max_epochs: f64) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_muennighoff_csv(file, &path.display().to_string(), max_epochs)
}

/// Maps the public run table onto [`RunRecord`]s. Epochs come from an
/// `epochs` column, or from `tokens / unique_tokens` when only total tokens
/// are given. Runs above `max_epochs` are rejected (and counted). Rows with
/// unparseable or invalid values are errors.
pub fn read_muennighoff_csv<R: Read>(reader: R, source: &str, max_epochs: f64) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.to_ascii_lowercase()).collect();
    let params = find_column(&headers, &MUENNIGHOFF_PARAMS)
        .ok_or_else(|| Error::SchemaMismatch("no parameter-count column".into()))?;
    let unique = find_column(&headers, &MUENNIGHOFF_UNIQUE)
        .ok_or_else(|| Error::SchemaMismatch("no unique-token column".into()))?;
    let loss = find_column(&headers, &MUENNIGHOFF_LOSS)
        .ok_or_else(|| Error::SchemaMismatch("no final-loss column".into()))?;
    let epochs = find_column(&headers, &MUENNIGHOFF_EPOCHS);
    let tokens = find_column(&headers, &MUENNIGHOFF_TOKENS);
    if epochs.is_none() && tokens.is_none() {
        return Err(Error::SchemaMismatch("need an `epochs` or total `tokens` column".into()));
    }

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    for result in rdr.records() {
        let rec = result?;
        let row = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let field = |i: usize| parse_field(rec.get(i).unwrap_or(""), row, &headers[i]);
        let n = field(params)?;
        let u = field(unique)?;
        let ep = match epochs {
            Some(i) => field(i)?,
            None => field(tokens.unwrap())? / u,
        };
        let l = field(loss)?;
        if ep > max_epochs {
            rejected.push(Rejection { row, reason: format!("epochs {ep} > {max_epochs}") });
            continue;
        }
        records.push(check_row(RunPoint { n_params: n, u_tokens: u, epochs: ep }, l, String::new(), row)?);
    }

    Ok(Dataset {
        rows_read: records.len() + rejected.len(),
        records,
        provenance: Provenance {
            source: source.to_string(),
            schema_version: MUENNIGHOFF_SCHEMA.into(),
            filter: format!("up to {max_epochs} epochs"),
        },
        rejected,
    })
}

/// A noisy sample of a known law on a grid of run points.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub generating_law: LawSpec,
    pub grid: Vec<RunPoint>,
    /// Standard deviation of the multiplicative log-normal noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

/// `loss = law(point) * exp(eps)`, `eps ~ Normal(0, sigma^2)`, drawn in grid
/// order from a ChaCha8 stream seeded with `seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.generating_law.validate()?;
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(Error::InvalidParams(format!("noise_sigma must be >= 0, got {}", spec.noise_sigma)));
    }
    let normal = Normal::new(0.0, spec.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParams(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let group = spec.generating_law.kind().as_str().to_string();
    let mut records = Vec::with_capacity(spec.grid.len());
    for (i, pt) in spec.grid.iter().enumerate() {
        pt.validate()?;
        let clean = crate::laws::eval_law(&spec.generating_law, pt)?;
        let loss = if spec.noise_sigma == 0.0 { clean } else { clean * normal.sample(&mut rng).exp() };
        records.push(check_row(*pt, loss, group.clone(), i + 1)?);
    }
    Ok(Dataset {
        rows_read: records.len(),
        records,
        provenance: Provenance {
            source: format!("synthetic:{}:seed={}", spec.generating_law.kind(), spec.seed),
            schema_version: SYNTHETIC_SCHEMA.into(),
            filter: format!("sigma={}", spec.noise_sigma),
        },
        rejected: Vec::new(),
    })
}

/// Total parameter counts of the nine scaling-study models
/// (15M, 25M, 35M, 50M, 125M, 250M, 500M, 750M, 1B).
pub const MODEL_SIZES: [f64; 9] =
    [15.87e6, 24.83e6, 35.30e6, 48.25e6, 134.26e6, 245.60e6, 488.55e6, 778.16e6, 1128.98e6];

/// Unique-token budgets of the single-epoch grids.
pub const DATA_BUDGETS: [f64; 8] = [50e6, 100e6, 200e6, 400e6, 800e6, 1.5e9, 3e9, 6e9];

/// Epoch columns of the multi-epoch grids.
pub const EPOCH_LEVELS: [f64; 6] = [1.0, 2.0, 4.0, 8.0, 12.0, 16.0];

/// Built-in sweep layouts mirroring the scaling-study grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridPreset {
    StdSingle,
    StdMulti,
    WdSingle,
    WdMulti,
}

// Rows: model index into MODEL_SIZES, then a presence mask over DATA_BUDGETS.
const STD_SINGLE: [(usize, u8); 9] = [
    (0, 0b0000_1111),
    (1, 0b1111_1111),
    (2, 0b0000_1111),
    (3, 0b1111_1111),
    (4, 0b1111_1111),
    (5, 0b1111_1111),
    (6, 0b0011_1111),
    (7, 0b0001_1111),
    (8, 0b0001_1111),
];

const WD_SINGLE: [(usize, u8); 7] = [
    (1, 0b1111_1111),
    (3, 0b1111_1111),
    (4, 0b1111_1100),
    (5, 0b1111_1000),
    (6, 0b1111_1111),
    (7, 0b0001_1111),
    (8, 0b0001_1111),
];

// Rows: model index, unique tokens, presence mask over EPOCH_LEVELS.
const STD_MULTI: [(usize, f64, u8); 17] = [
    (1, 50e6, 0b10_0110),
    (1, 100e6, 0b11_1100),
    (1, 200e6, 0b11_1111),
    (3, 50e6, 0b11_1111),
    (3, 100e6, 0b11_1111),
    (3, 200e6, 0b11_1111),
    (4, 100e6, 0b11_1110),
    (4, 200e6, 0b11_1111),
    (4, 400e6, 0b11_1111),
    (4, 800e6, 0b11_1110),
    (5, 100e6, 0b11_1111),
    (5, 200e6, 0b11_1111),
    (5, 400e6, 0b11_1111),
    (5, 800e6, 0b11_1110),
    (6, 100e6, 0b11_1111),
    (6, 200e6, 0b10_1111),
    (6, 400e6, 0b11_1111),
];

const WD_MULTI: [(usize, f64, u8); 17] = [
    (1, 50e6, 0b11_1111),
    (1, 100e6, 0b11_1111),
    (1, 200e6, 0b10_1111),
    (3, 50e6, 0b00_0111),
    (3, 100e6, 0b11_1111),
    (3, 200e6, 0b11_1111),
    (4, 100e6, 0b11_1110),
    (4, 200e6, 0b11_1111),
    (4, 400e6, 0b11_1111),
    (4, 800e6, 0b11_1111),
    (5, 100e6, 0b11_1110),
    (5, 200e6, 0b11_1110),
    (5, 400e6, 0b11_1111),
    (5, 800e6, 0b11_1111),
    (6, 100e6, 0b11_1111),
    (6, 200e6, 0b11_1111),
    (6, 400e6, 0b11_1111),
];

fn single_grid(rows: &[(usize, u8)]) -> Vec<RunPoint> {
    rows.iter()
        .flat_map(|&(m, mask)| {
            DATA_BUDGETS
                .iter()
                .enumerate()
                .filter(move |(j, _)| mask & (1 << j) != 0)
                .map(move |(_, &u)| RunPoint { n_params: MODEL_SIZES[m], u_tokens: u, epochs: 1.0 })
        })
        .collect()
}

fn multi_grid(rows: &[(usize, f64, u8)]) -> Vec<RunPoint> {
    rows.iter()
        .flat_map(|&(m, u, mask)| {
            EPOCH_LEVELS
                .iter()
                .enumerate()
                .filter(move |(j, _)| mask & (1 << j) != 0)
                .map(move |(_, &e)| RunPoint { n_params: MODEL_SIZES[m], u_tokens: u, epochs: e })
        })
        .collect()
}

impl GridPreset {
    pub const ALL: [GridPreset; 4] =
        [GridPreset::StdSingle, GridPreset::StdMulti, GridPreset::WdSingle, GridPreset::WdMulti];

    pub fn name(&self) -> &'static str {
        match self {
            GridPreset::StdSingle => "grid-std-single",
            GridPreset::StdMulti => "grid-std-multi",
            GridPreset::WdSingle => "grid-wd-single",
            GridPreset::WdMulti => "grid-wd-multi",
        }
    }

    pub fn points(&self) -> Vec<RunPoint> {
        match self {
            GridPreset::StdSingle => single_grid(&STD_SINGLE),
            GridPreset::StdMulti => multi_grid(&STD_MULTI),
            GridPreset::WdSingle => single_grid(&WD_SINGLE),
            GridPreset::WdMulti => multi_grid(&WD_MULTI),
        }
    }
}

impl fmt::Display for GridPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GridPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        GridPreset::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Unknown { kind: "grid preset", name: s.to_string() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::published;

    #[test]
    fn native_three_rows() {
        let text = "n_params,u_tokens,epochs,loss_nats,group\n\
                    1e7,1e8,1,3.5,wd0.1\n2e7,1e8,2,3.4,wd0.1\n4e7,1e8,4,3.3,wd1.0\n";
        let ds = read_native_csv(text.as_bytes(), "mem").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.records[2].group, "wd1.0");
        assert_eq!(ds.rows_read, ds.records.len() + ds.rejected.len());
    }

    #[test]
    fn native_zero_epochs_names_the_row() {
        let text = "n_params,u_tokens,epochs,loss_nats,group\n1e7,1e8,1,3.5,a\n1e7,1e8,0,3.5,a\n";
        match read_native_csv(text.as_bytes(), "mem") {
            Err(Error::InvariantViolation { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected invariant violation, got {other:?}"),
        }
    }

    #[test]
    fn native_parse_error_names_the_row() {
        let text = "n_params,u_tokens,epochs,loss_nats\n1e7,1e8,1,abc\n";
        assert!(matches!(read_native_csv(text.as_bytes(), "mem"), Err(Error::Parse { row: 2, .. })));
    }

    #[test]
    fn native_perplexity_fallback() {
        let text = "n_params,u_tokens,epochs,perplexity,group\n1e7,1e8,1,20.0,x\n";
        let ds = read_native_csv(text.as_bytes(), "mem").unwrap();
        assert!((ds.records[0].loss - 20f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn native_schema_mismatch() {
        for text in ["n_params,u_tokens,loss_nats\n1,1,1\n", "n_params,u_tokens,epochs,loss_nats,lr\n1,1,1,1,1\n"] {
            assert!(matches!(read_native_csv(text.as_bytes(), "mem"), Err(Error::SchemaMismatch(_))));
        }
    }

    #[test]
    fn native_write_read_round_trip() {
        let ds = generate_synthetic(&SyntheticSpec {
            generating_law: published::std_add4(),
            grid: GridPreset::StdMulti.points(),
            noise_sigma: 0.01,
            seed: 3,
        })
        .unwrap();
        let mut buf = Vec::new();
        write_native_csv(&ds.records, &mut buf).unwrap();
        let back = read_native_csv(buf.as_slice(), "mem").unwrap();
        assert_eq!(back.records, ds.records);
    }

    const MUENNIGHOFF_TEXT: &str = "Parameters,Unique_Tokens,Tokens,Final_Loss\n\
        1e8,1e9,1e9,3.1\n1e8,1e9,4e9,3.0\n1e8,1e8,6.4e9,3.6\n1e8,1e8,1e10,3.9\n";

    #[test]
    fn muennighoff_epoch_ceiling() {
        let ds = read_muennighoff_csv(MUENNIGHOFF_TEXT.as_bytes(), "mem", 64.0).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.rejected.len(), 1);
        assert_eq!(ds.rows_read, 4);
        assert!(ds.records.iter().all(|r| r.point.epochs <= 64.0));
        assert_eq!(ds.provenance.filter, "up to 64 epochs");

        let single = read_muennighoff_csv(MUENNIGHOFF_TEXT.as_bytes(), "mem", 1.0).unwrap();
        assert_eq!(single.len(), 1);
        assert!(single.records[0].point.is_single_epoch());
    }

    #[test]
    fn muennighoff_missing_columns() {
        let text = "Parameters,Final_Loss\n1e8,3.0\n";
        assert!(matches!(read_muennighoff_csv(text.as_bytes(), "mem", 64.0), Err(Error::SchemaMismatch(_))));
    }

    #[test]
    fn preset_sizes() {
        assert_eq!(GridPreset::StdSingle.points().len(), 56);
        assert_eq!(GridPreset::WdSingle.points().len(), 45);
        let std_multi = GridPreset::StdMulti.points();
        let wd_multi = GridPreset::WdMulti.points();
        assert_eq!(std_multi.iter().filter(|p| p.epochs > 1.0).count(), 81);
        assert_eq!(wd_multi.iter().filter(|p| p.epochs > 1.0).count(), 81);
        let mut cells: Vec<(u64, u64)> =
            std_multi.iter().map(|p| (p.n_params as u64, p.u_tokens as u64)).collect();
        cells.dedup();
        assert_eq!(cells.len(), 17);
        for g in GridPreset::ALL {
            assert_eq!(g.name().parse::<GridPreset>().unwrap(), g);
        }
    }

    #[test]
    fn synthetic_is_deterministic_and_exact_without_noise() {
        let spec = SyntheticSpec {
            generating_law: published::std_add4(),
            grid: GridPreset::StdMulti.points(),
            noise_sigma: 0.02,
            seed: 11,
        };
        assert_eq!(generate_synthetic(&spec).unwrap(), generate_synthetic(&spec).unwrap());
        let clean = generate_synthetic(&SyntheticSpec { noise_sigma: 0.0, ..spec.clone() }).unwrap();
        for r in &clean.records {
            assert_eq!(r.loss, crate::laws::eval_law(&spec.generating_law, &r.point).unwrap());
        }
        let noisy = generate_synthetic(&spec).unwrap();
        assert!(noisy.records.iter().zip(&clean.records).any(|(a, b)| a.loss != b.loss));
    }
}
