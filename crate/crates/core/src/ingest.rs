//! Contingency tables: parsing, reduction to marginals, dataset I/O and a
//! synthetic generator.
//!
//! Table file format (UTF-8, tab separated): the first line holds the column
//! labels, every further line a row label followed by integer counts. A
//! multi-table file precedes each block with a line `# pair k l`. Dataset
//! directories hold one file per pair named `pair_<k>_<l>.tsv` with
//! zero-padded three-digit indices.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{marginals_of, JointDistribution, MarginalPair};
use crate::error::{Error, Result};

/// Unordered position pair `(k, l)` with `k < l`.
pub type PairId = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pair: PairId,
    row_labels: Vec<String>,
    col_labels: Vec<String>,
    /// Row-major counts.
    counts: Vec<u64>,
}

impl ContingencyTable {
    /// Fails on ragged or empty counts, label/shape mismatches, duplicate
    /// labels or a zero total.
    pub fn new(
        pair: PairId,
        row_labels: Vec<String>,
        col_labels: Vec<String>,
        counts: Vec<Vec<u64>>,
    ) -> Result<Self> {
        let (n, m) = (row_labels.len(), col_labels.len());
        if n == 0 || m == 0 {
            return Err(Error::Domain(
                "table needs at least one row and column".into(),
            ));
        }
        if counts.len() != n || counts.iter().any(|r| r.len() != m) {
            return Err(Error::Domain(format!(
                "counts do not form a {n}x{m} matrix"
            )));
        }
        if let Some(dup) = first_duplicate(&row_labels).or_else(|| first_duplicate(&col_labels)) {
            return Err(Error::Domain(format!("duplicate label {dup:?}")));
        }
        let counts = counts.concat();
        if counts.iter().all(|&c| c == 0) {
            return Err(Error::Domain("table has zero total count".into()));
        }
        Ok(Self {
            pair,
            row_labels,
            col_labels,
            counts,
        })
    }

    pub fn pair(&self) -> PairId {
        self.pair
    }

    pub fn n(&self) -> usize {
        self.row_labels.len()
    }

    pub fn m(&self) -> usize {
        self.col_labels.len()
    }

    pub fn row_labels(&self) -> &[String] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[String] {
        &self.col_labels
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.m() + j]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

fn first_duplicate(labels: &[String]) -> Option<&str> {
    let mut seen = HashSet::new();
    labels
        .iter()
        .find(|l| !seen.insert(l.as_str()))
        .map(String::as_str)
}

/// A table normalized to a joint distribution, with empty rows and columns
/// removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedInstance {
    pub pair: PairId,
    pub marg: MarginalPair,
    pub data_joint: JointDistribution,
    /// Original row index of each kept row.
    pub kept_rows: Vec<usize>,
    /// Original column index of each kept column.
    pub kept_cols: Vec<usize>,
    /// One row or one column left: the feasible set is a single plan.
    pub trivial: bool,
}

/// Parse one table block. Line numbers in errors are 1-based.
pub fn parse_table(text: &str, pair: PairId) -> Result<ContingencyTable> {
    parse_block(text.lines().enumerate().map(|(i, l)| (i + 1, l)), pair, 1)
}

fn parse_block<'a>(
    lines: impl Iterator<Item = (usize, &'a str)>,
    pair: PairId,
    first_line: usize,
) -> Result<ContingencyTable> {
    let mut lines = lines
        .map(|(no, l)| (no, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty());
    let (header_line, header) = lines.next().ok_or(Error::Parse {
        line: first_line,
        msg: "missing header line".into(),
    })?;
    let mut fields: Vec<&str> = header.split('\t').collect();
    // tolerate a leading empty corner cell
    if fields.len() > 1 && fields[0].is_empty() {
        fields.remove(0);
    }
    let col_labels: Vec<String> = fields.iter().map(|s| s.trim().to_string()).collect();
    check_labels(&col_labels, header_line)?;

    let mut row_labels = Vec::new();
    let mut counts = Vec::new();
    for (no, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != col_labels.len() + 1 {
            return Err(Error::Parse {
                line: no,
                msg: format!(
                    "expected a label and {} counts, found {} fields",
                    col_labels.len(),
                    fields.len()
                ),
            });
        }
        let row = fields[1..]
            .iter()
            .map(|f| {
                let f = f.trim();
                if f.starts_with('-') {
                    return Err(Error::Parse {
                        line: no,
                        msg: format!("negative count {f:?}"),
                    });
                }
                f.parse::<u64>().map_err(|_| Error::Parse {
                    line: no,
                    msg: format!("count {f:?} is not a nonnegative integer"),
                })
            })
            .collect::<Result<Vec<u64>>>()?;
        let label = fields[0].trim().to_string();
        if label.is_empty() {
            return Err(Error::Parse {
                line: no,
                msg: "empty row label".into(),
            });
        }
        if row_labels.contains(&label) {
            return Err(Error::Parse {
                line: no,
                msg: format!("duplicate row label {label:?}"),
            });
        }
        row_labels.push(label);
        counts.push(row);
    }
    if row_labels.is_empty() {
        return Err(Error::Parse {
            line: header_line,
            msg: "no data rows".into(),
        });
    }
    ContingencyTable::new(pair, row_labels, col_labels, counts).map_err(|e| Error::Parse {
        line: header_line,
        msg: e.to_string(),
    })
}

fn check_labels(labels: &[String], line: usize) -> Result<()> {
    if labels.iter().any(String::is_empty) {
        return Err(Error::Parse {
            line,
            msg: "empty column label".into(),
        });
    }
    if let Some(dup) = first_duplicate(labels) {
        return Err(Error::Parse {
            line,
            msg: format!("duplicate column label {dup:?}"),
        });
    }
    Ok(())
}

/// Parse a multi-table file: blocks introduced by `# pair k l`.
pub fn parse_tables(text: &str) -> Result<Vec<ContingencyTable>> {
    let lines: Vec<(usize, &str)> = text.lines().enumerate().map(|(i, l)| (i + 1, l)).collect();
    let mut starts = Vec::new();
    for (idx, &(no, line)) in lines.iter().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix('#') {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            match parts.as_slice() {
                ["pair", k, l] => {
                    let parse = |s: &str| {
                        s.parse::<usize>().map_err(|_| Error::Parse {
                            line: no,
                            msg: format!("bad position index {s:?}"),
                        })
                    };
                    starts.push((idx, (parse(k)?, parse(l)?)));
                }
                _ => {
                    return Err(Error::Parse {
                        line: no,
                        msg: format!("unrecognized directive {line:?}"),
                    })
                }
            }
        } else if starts.is_empty() && !line.is_empty() {
            return Err(Error::Parse {
                line: no,
                msg: "table data before the first '# pair k l' line".into(),
            });
        }
    }
    if starts.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "no '# pair k l' blocks".into(),
        });
    }
    let mut tables = Vec::with_capacity(starts.len());
    for (b, &(idx, pair)) in starts.iter().enumerate() {
        let end = starts.get(b + 1).map_or(lines.len(), |s| s.0);
        let first = lines[idx].0 + 1;
        tables.push(parse_block(
            lines[idx + 1..end].iter().copied(),
            pair,
            first,
        )?);
    }
    Ok(tables)
}

/// Normalize counts, drop zero rows and columns, and flag trivial instances.
pub fn reduce(table: &ContingencyTable) -> Result<ReducedInstance> {
    let (n, m) = (table.n(), table.m());
    let total = table.total();
    if total == 0 {
        return Err(Error::Domain("all-zero table".into()));
    }
    let kept_rows: Vec<usize> = (0..n)
        .filter(|&i| (0..m).any(|j| table.get(i, j) > 0))
        .collect();
    let kept_cols: Vec<usize> = (0..m)
        .filter(|&j| (0..n).any(|i| table.get(i, j) > 0))
        .collect();
    let t = total as f64;
    let p: Vec<f64> = kept_rows
        .iter()
        .flat_map(|&i| kept_cols.iter().map(move |&j| table.get(i, j) as f64 / t))
        .collect();
    let data_joint = JointDistribution::new(kept_rows.len(), kept_cols.len(), p)?;
    let marg = marginals_of(&data_joint)?;
    Ok(ReducedInstance {
        pair: table.pair(),
        trivial: marg.is_trivial(),
        marg,
        data_joint,
        kept_rows,
        kept_cols,
    })
}

/// File name used for `pair` in dataset directories.
pub fn table_file_name(pair: PairId) -> String {
    format!("pair_{:03}_{:03}.tsv", pair.0, pair.1)
}

fn pair_from_file_name(name: &str) -> Option<PairId> {
    let stem = name.strip_prefix("pair_")?.strip_suffix(".tsv")?;
    let (k, l) = stem.split_once('_')?;
    let digits = |s: &str| s.len() >= 3 && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(k) || !digits(l) {
        return None;
    }
    Some((k.parse().ok()?, l.parse().ok()?))
}

/// Read a single table file. The pair id comes from a `pair_<k>_<l>.tsv`
/// name and defaults to `(1, 2)` otherwise.
pub fn read_table(path: &Path) -> Result<ContingencyTable> {
    let text = fs::read_to_string(path)?;
    let pair = path
        .file_name()
        .and_then(|n| pair_from_file_name(&n.to_string_lossy()))
        .unwrap_or((1, 2));
    parse_table(&text, pair)
}

/// Load every table of a dataset directory, or of a single multi-table file,
/// ordered by pair.
///
/// Fails on unparseable tables, `.tsv` files without a pair id in their name,
/// pairs with `k >= l`, and duplicate pairs.
pub fn load_dataset(path: &Path) -> Result<Vec<ContingencyTable>> {
    let mut tables = if path.is_dir() {
        let mut files = Vec::new();
        for entry in fs::read_dir(path)? {
            let entry = entry?;
            let name = entry.file_name().to_string_lossy().into_owned();
            if !name.ends_with(".tsv") {
                continue;
            }
            let pair = pair_from_file_name(&name).ok_or_else(|| {
                Error::Load(format!("{name}: no pair id (expected pair_<k>_<l>.tsv)"))
            })?;
            files.push((pair, entry.path()));
        }
        files.sort();
        files
            .par_iter()
            .map(|(pair, file)| {
                let text = fs::read_to_string(file)?;
                parse_table(&text, *pair)
                    .map_err(|e| Error::Load(format!("{}: {e}", file.display())))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        let text = fs::read_to_string(path)?;
        parse_tables(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?
    };
    tables.sort_by_key(ContingencyTable::pair);
    for t in &tables {
        let (k, l) = t.pair();
        if k >= l {
            return Err(Error::Load(format!("pair ({k}, {l}) is not ordered k < l")));
        }
    }
    if let Some(w) = tables.windows(2).find(|w| w[0].pair() == w[1].pair()) {
        return Err(Error::Load(format!("duplicate pair {:?}", w[0].pair())));
    }
    if tables.is_empty() {
        return Err(Error::Load(format!("{}: no tables", path.display())));
    }
    Ok(tables)
}

/// Serialize one table in the table file format.
pub fn dump_table(table: &ContingencyTable) -> String {
    let mut out = table.col_labels.join("\t");
    out.push('\n');
    for i in 0..table.n() {
        out.push_str(&table.row_labels[i]);
        for j in 0..table.m() {
            write!(out, "\t{}", table.get(i, j)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Serialize tables in the multi-table format.
pub fn dump_tables(tables: &[ContingencyTable]) -> String {
    let mut out = String::new();
    for t in tables {
        writeln!(out, "# pair {} {}", t.pair.0, t.pair.1).unwrap();
        out.push_str(&dump_table(t));
    }
    out
}

/// Write one file per table into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, tables: &[ContingencyTable]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for t in tables {
        fs::write(dir.join(table_file_name(t.pair)), dump_table(t))?;
    }
    Ok(())
}

/// Pseudo-random dataset with one table per pair `k < l` of `positions`
/// positions (numbered from 1) over an alphabet of the first
/// `alphabet_size` capital letters.
///
/// The generator is ChaCha8 seeded through `seed_from_u64(seed)`. Each table
/// mixes a product of random marginals with a random one-to-one coupling of
/// random strength, so dependence varies across pairs. With `sparsity > 0`
/// each cell is zeroed with that probability and each position is conserved
/// (a single symbol) with probability `sparsity / 4`, which makes every
/// table involving it trivial. With `sparsity = 0` all tables are dense.
pub fn synth_dataset(
    positions: usize,
    alphabet_size: usize,
    seed: u64,
    sparsity: f64,
) -> Result<Vec<ContingencyTable>> {
    if positions < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 positions, got {positions}"
        )));
    }
    if !(1..=26).contains(&alphabet_size) {
        return Err(Error::Domain(format!(
            "alphabet size must be in 1..=26, got {alphabet_size}"
        )));
    }
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::Domain(format!(
            "sparsity must be in [0, 1], got {sparsity}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let letters: Vec<String> = (0..alphabet_size)
        .map(|i| char::from(b'A' + i as u8).to_string())
        .collect();
    let conserved: Vec<Option<usize>> = (0..positions)
        .map(|_| {
            let hit = sparsity > 0.0 && rng.gen::<f64>() < sparsity / 4.0;
            let symbol = rng.gen_range(0..alphabet_size);
            hit.then_some(symbol)
        })
        .collect();

    let mut tables = Vec::with_capacity(positions * (positions - 1) / 2);
    for k in 0..positions {
        for l in k + 1..positions {
            let a = random_weights(&mut rng, alphabet_size);
            let b = random_weights(&mut rng, alphabet_size);
            let strength: f64 = rng.gen();
            let mut perm: Vec<usize> = (0..alphabet_size).collect();
            for i in (1..alphabet_size).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let total = rng.gen_range(100..1000) as f64;

            let rows: Vec<usize> =
                conserved[k].map_or_else(|| (0..alphabet_size).collect(), |s| vec![s]);
            let cols: Vec<usize> =
                conserved[l].map_or_else(|| (0..alphabet_size).collect(), |s| vec![s]);
            let mut counts: Vec<Vec<u64>> = rows
                .iter()
                .map(|&i| {
                    cols.iter()
                        .map(|&j| {
                            let coupled = if perm[i] == j { a[i] } else { 0.0 };
                            let w = (1.0 - strength) * a[i] * b[j] + strength * coupled;
                            let zeroed = sparsity > 0.0 && rng.gen::<f64>() < sparsity;
                            if zeroed {
                                0
                            } else {
                                1 + (w * total) as u64
                            }
                        })
                        .collect()
                })
                .collect();
            if counts.iter().flatten().all(|&c| c == 0) {
                counts[0][0] = 1;
            }
            tables.push(ContingencyTable::new(
                (k + 1, l + 1),
                rows.iter().map(|&i| letters[i].clone()).collect(),
                cols.iter().map(|&j| letters[j].clone()).collect(),
                counts,
            )?);
        }
    }
    Ok(tables)
}

fn random_weights(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..len).map(|_| rng.gen_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}
