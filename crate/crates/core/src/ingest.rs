//! Price loading, synchronization and binarization.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names used to read a long-format price CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvColumns {
    pub timestamp: String,
    pub entity: String,
    pub open: String,
    pub close: String,
}

impl Default for CsvColumns {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            entity: "entity".into(),
            open: "open".into(),
            close: "close".into(),
        }
    }
}

/// Opening and closing prices for `N` entities over `T` time bins.
///
/// Cells are `None` when an entity has no row for a bin. [`synchronize`]
/// removes every bin that has at least one missing cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PricePanel {
    pub entities: Vec<String>,
    pub timestamps: Vec<String>,
    pub open: Vec<Vec<Option<f64>>>,
    pub close: Vec<Vec<Option<f64>>>,
}

impl PricePanel {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_bins(&self) -> usize {
        self.timestamps.len()
    }

    /// `(entity, bin)` indices of every missing cell, in row-major order.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, (o, c)) in self.open.iter().zip(&self.close).enumerate() {
            for t in 0..o.len() {
                if o[t].is_none() || c[t].is_none() {
                    out.push((i, t));
                }
            }
        }
        out
    }

    pub fn is_complete(&self) -> bool {
        self.missing_cells().is_empty()
    }
}

/// Parses a long-format CSV (one row per bin and entity).
pub fn load_price_csv(path: impl AsRef<Path>, columns: &CsvColumns) -> Result<PricePanel> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
    parse_price_csv(&text, columns)
}

/// Same as [`load_price_csv`] on an in-memory document.
pub fn parse_price_csv(text: &str, columns: &CsvColumns) -> Result<PricePanel> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
            line: 1,
            message: format!("missing column `{name}`"),
        })
    };
    let (ts_col, ent_col, open_col, close_col) = (
        find(&columns.timestamp)?,
        find(&columns.entity)?,
        find(&columns.open)?,
        find(&columns.close)?,
    );

    let mut entities: Vec<String> = Vec::new();
    let mut entity_index: HashMap<String, usize> = HashMap::new();
    let mut timestamps = BTreeSet::new();
    let mut rows: HashMap<(usize, String), (f64, f64)> = HashMap::new();

    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let field = |col: usize| {
            record.get(col).ok_or_else(|| Error::Parse {
                line,
                message: format!("expected at least {} fields", col + 1),
            })
        };
        let price = |col: usize| -> Result<f64> {
            let raw = field(col)?;
            raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                message: format!("`{raw}` is not a number"),
            })
        };
        let ts = field(ts_col)?.to_string();
        let entity = field(ent_col)?.to_string();
        let (open, close) = (price(open_col)?, price(close_col)?);
        for (label, p) in [("open", open), ("close", close)] {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::Validation(format!(
                    "non-positive {label} price {p} for entity `{entity}` at `{ts}`"
                )));
            }
        }
        let idx = *entity_index.entry(entity.clone()).or_insert_with(|| {
            entities.push(entity.clone());
            entities.len() - 1
        });
        if rows.insert((idx, ts.clone()), (open, close)).is_some() {
            return Err(Error::Parse {
                line,
                message: format!("duplicate row for entity `{entity}` at `{ts}`"),
            });
        }
        timestamps.insert(ts);
    }

    let timestamps: Vec<String> = timestamps.into_iter().collect();
    let n = entities.len();
    let mut open = vec![vec![None; timestamps.len()]; n];
    let mut close = vec![vec![None; timestamps.len()]; n];
    for i in 0..n {
        for (t, ts) in timestamps.iter().enumerate() {
            if let Some(&(o, c)) = rows.get(&(i, ts.clone())) {
                open[i][t] = Some(o);
                close[i][t] = Some(c);
            }
        }
    }
    Ok(PricePanel {
        entities,
        timestamps,
        open,
        close,
    })
}

/// Drops every bin that is missing for at least one entity.
pub fn synchronize(panel: &PricePanel) -> Result<PricePanel> {
    let keep: Vec<usize> = (0..panel.n_bins())
        .filter(|&t| {
            panel
                .open
                .iter()
                .zip(&panel.close)
                .all(|(o, c)| o[t].is_some() && c[t].is_some())
        })
        .collect();
    if keep.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "{} synchronous bins remain after removing incomplete bins",
            keep.len()
        )));
    }
    let pick = |m: &Vec<Vec<Option<f64>>>| -> Vec<Vec<Option<f64>>> {
        m.iter().map(|row| keep.iter().map(|&t| row[t]).collect()).collect()
    };
    Ok(PricePanel {
        entities: panel.entities.clone(),
        timestamps: keep.iter().map(|&t| panel.timestamps[t].clone()).collect(),
        open: pick(&panel.open),
        close: pick(&panel.close),
    })
}

/// How a zero intraperiod return is mapped onto an orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ZeroPolicy {
    /// Zero returns count as `+1`.
    #[default]
    Positive,
    /// Zero returns repeat the previous sign, `+1` at the first bin.
    CarryForward,
}

/// `N × T` panel of ±1 orientations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignPanel {
    pub entities: Vec<String>,
    pub timestamps: Vec<String>,
    pub signs: Vec<Vec<i8>>,
}

impl SignPanel {
    /// Builds a panel, checking shape and alphabet.
    pub fn new(entities: Vec<String>, timestamps: Vec<String>, signs: Vec<Vec<i8>>) -> Result<Self> {
        let panel = Self {
            entities,
            timestamps,
            signs,
        };
        panel.validate()?;
        Ok(panel)
    }

    /// A panel with generated labels `e0..`, `0..`.
    pub fn from_signs(signs: Vec<Vec<i8>>) -> Result<Self> {
        let n = signs.len();
        let t = signs.first().map_or(0, Vec::len);
        Self::new(
            (0..n).map(|i| format!("e{i}")).collect(),
            (0..t).map(|t| t.to_string()).collect(),
            signs,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.signs.len() != self.entities.len() {
            return Err(Error::Shape(format!(
                "{} sign rows for {} entities",
                self.signs.len(),
                self.entities.len()
            )));
        }
        for (i, row) in self.signs.iter().enumerate() {
            if row.len() != self.timestamps.len() {
                return Err(Error::Shape(format!(
                    "row {i} has {} bins, expected {}",
                    row.len(),
                    self.timestamps.len()
                )));
            }
            if let Some(t) = row.iter().position(|&s| s != 1 && s != -1) {
                return Err(Error::Validation(format!(
                    "sign {} at entity {i}, bin {t} is not ±1",
                    row[t]
                )));
            }
        }
        Ok(())
    }

    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_bins(&self) -> usize {
        self.timestamps.len()
    }

    /// Full market state at bin `t`.
    pub fn state_at(&self, t: usize) -> Vec<i8> {
        self.signs.iter().map(|row| row[t]).collect()
    }

    /// Time-major copy: `out[t][i] = signs[i][t]`.
    pub fn states(&self) -> Vec<Vec<i8>> {
        (0..self.n_bins()).map(|t| self.state_at(t)).collect()
    }

    /// Sub-panel restricted to the given entities (in the given order).
    pub fn select_entities(&self, idx: &[usize]) -> SignPanel {
        SignPanel {
            entities: idx.iter().map(|&i| self.entities[i].clone()).collect(),
            timestamps: self.timestamps.clone(),
            signs: idx.iter().map(|&i| self.signs[i].clone()).collect(),
        }
    }

    /// Sub-panel restricted to bins `range`.
    pub fn slice_bins(&self, range: std::ops::Range<usize>) -> SignPanel {
        SignPanel {
            entities: self.entities.clone(),
            timestamps: self.timestamps[range.clone()].to_vec(),
            signs: self.signs.iter().map(|r| r[range.clone()].to_vec()).collect(),
        }
    }

    pub fn mean_signs(&self) -> Vec<f64> {
        self.signs
            .iter()
            .map(|r| r.iter().map(|&s| f64::from(s)).sum::<f64>() / r.len().max(1) as f64)
            .collect()
    }
}

/// Output of [`compute_signs`].
#[derive(Debug, Clone, PartialEq)]
pub struct SignConversion {
    pub panel: SignPanel,
    /// Number of cells whose return was exactly zero.
    pub zero_returns: usize,
}

/// Binarizes intraperiod returns `(close - open) / open`.
pub fn compute_signs(panel: &PricePanel, zero_policy: ZeroPolicy) -> Result<SignConversion> {
    let mut zero_returns = 0;
    let mut signs = Vec::with_capacity(panel.n_entities());
    for (i, (open, close)) in panel.open.iter().zip(&panel.close).enumerate() {
        let mut row = Vec::with_capacity(open.len());
        let mut prev: i8 = 1;
        for t in 0..open.len() {
            let (Some(o), Some(c)) = (open[t], close[t]) else {
                return Err(Error::Validation(format!(
                    "entity `{}` is missing bin `{}`; synchronize first",
                    panel.entities[i], panel.timestamps[t]
                )));
            };
            let r = (c - o) / o;
            let s = if r > 0.0 {
                1
            } else if r < 0.0 {
                -1
            } else {
                zero_returns += 1;
                match zero_policy {
                    ZeroPolicy::Positive => 1,
                    ZeroPolicy::CarryForward => prev,
                }
            };
            prev = s;
            row.push(s);
        }
        signs.push(row);
    }
    if zero_returns > 0 {
        log::info!("{zero_returns} zero returns resolved with policy {zero_policy:?}");
    }
    Ok(SignConversion {
        panel: SignPanel::new(panel.entities.clone(), panel.timestamps.clone(), signs)?,
        zero_returns,
    })
}

/// `N × (T-1)` indicator matrix of orientation reversals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReversalPanel {
    pub entities: Vec<String>,
    /// Label of the later bin of each consecutive pair.
    pub timestamps: Vec<String>,
    pub flips: Vec<Vec<u8>>,
}

impl ReversalPanel {
    pub fn n_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn n_bins(&self) -> usize {
        self.timestamps.len()
    }

    pub fn state_at(&self, t: usize) -> Vec<u8> {
        self.flips.iter().map(|r| r[t]).collect()
    }

    /// Number of simultaneous reversals in each bin.
    pub fn counts(&self) -> Vec<usize> {
        (0..self.n_bins())
            .map(|t| self.flips.iter().map(|r| usize::from(r[t])).sum())
            .collect()
    }

    pub fn select_entities(&self, idx: &[usize]) -> ReversalPanel {
        ReversalPanel {
            entities: idx.iter().map(|&i| self.entities[i].clone()).collect(),
            timestamps: self.timestamps.clone(),
            flips: idx.iter().map(|&i| self.flips[i].clone()).collect(),
        }
    }

    /// The same events recoded as ±1 (`1 → +1`, `0 → -1`).
    pub fn as_sign_panel(&self) -> SignPanel {
        SignPanel {
            entities: self.entities.clone(),
            timestamps: self.timestamps.clone(),
            signs: self
                .flips
                .iter()
                .map(|r| r.iter().map(|&x| if x == 1 { 1 } else { -1 }).collect())
                .collect(),
        }
    }
}

pub fn compute_reversals(signs: &SignPanel) -> Result<ReversalPanel> {
    if signs.n_bins() < 2 {
        return Err(Error::InsufficientData("reversals need at least two bins".into()));
    }
    let flips = signs
        .signs
        .iter()
        .map(|row| row.windows(2).map(|w| u8::from(w[1] == -w[0])).collect())
        .collect();
    Ok(ReversalPanel {
        entities: signs.entities.clone(),
        timestamps: signs.timestamps[1..].to_vec(),
        flips,
    })
}
