//! Per-jump delimited files plus a `manifest.toml` describing the dataset.
//!
//! Column layout (header row required):
//!
//! ```text
//! t, q_0..q_{m+5}, dq_0..dq_{m+5}, tau_0..tau_{m-1}, c_0..c_3,
//! [ff_0..ff_11], [fp_0..fp_11], [com_x, com_y, com_z], [j0_00..j3_22]
//! ```
//!
//! `jK_RC` is entry (R, C) of the 3×3 jacobian of leg K. Columns are
//! located by name, so extra columns are ignored on read.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{ContactFlags, Dataset, DatasetMetadata, NoiseSigma, Split, Trajectory};
use crate::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.toml";

/// How to interpret a directory of jump files when no manifest is present.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSchema {
    /// Number of actuated joints; required without a manifest.
    pub m: Option<usize>,
    pub delimiter: u8,
}

impl Default for DatasetSchema {
    fn default() -> Self {
        Self {
            m: None,
            delimiter: b',',
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    robot: String,
    m: usize,
    dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<NoiseSigma>,
    jumps: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    file: String,
    split: Split,
}

fn header_names(m: usize) -> Vec<String> {
    let n = m + 6;
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("q_{i}")));
    h.extend((0..n).map(|i| format!("dq_{i}")));
    h.extend((0..m).map(|i| format!("tau_{i}")));
    h.extend((0..4).map(|i| format!("c_{i}")));
    h
}

fn jacobian_names() -> Vec<String> {
    let mut out = Vec::with_capacity(36);
    for k in 0..4 {
        for r in 0..3 {
            for c in 0..3 {
                out.push(format!("j{k}_{r}{c}"));
            }
        }
    }
    out
}

fn group(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}_{i}")).collect()
}

const COM_NAMES: [&str; 3] = ["com_x", "com_y", "com_z"];

struct Table {
    path: PathBuf,
    columns: HashMap<String, usize>,
    rows: Vec<Vec<f64>>,
}

impl Table {
    fn read(path: &Path, delimiter: u8) -> Result<Table> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|source| Error::Csv {
                path: path.into(),
                source,
            })?;
        let headers = reader
            .headers()
            .map_err(|source| Error::Csv {
                path: path.into(),
                source,
            })?
            .clone();
        let names: Vec<String> = headers.iter().map(str::to_string).collect();
        let columns = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        let mut rows = Vec::new();
        for (r, record) in reader.records().enumerate() {
            let record = record.map_err(|source| Error::Csv {
                path: path.into(),
                source,
            })?;
            if record.len() != names.len() {
                return Err(Error::RowLength {
                    file: path.into(),
                    row: r + 1,
                    expected: names.len(),
                    found: record.len(),
                });
            }
            let row = record
                .iter()
                .enumerate()
                .map(|(c, field)| {
                    field.parse::<f64>().map_err(|_| Error::InvalidValue {
                        file: path.into(),
                        row: r + 1,
                        column: names[c].clone(),
                        message: format!("`{field}` is not a number"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok(Table {
            path: path.into(),
            columns,
            rows,
        })
    }

    fn has(&self, name: &str) -> bool {
        self.columns.contains_key(name)
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.columns.get(name).copied().ok_or_else(|| Error::MissingColumn {
            file: self.path.clone(),
            column: name.to_string(),
        })
    }

    fn matrix(&self, names: &[String]) -> Result<DMatrix<f64>> {
        let idx = names.iter().map(|n| self.index(n)).collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_fn(self.rows.len(), idx.len(), |r, c| self.rows[r][idx[c]]))
    }

    fn optional(&self, names: &[String]) -> Result<Option<DMatrix<f64>>> {
        match names.iter().filter(|n| self.has(n)).count() {
            0 => Ok(None),
            _ => self.matrix(names).map(Some),
        }
    }
}

fn read_trajectory(path: &Path, m: usize, delimiter: u8) -> Result<Trajectory> {
    let table = Table::read(path, delimiter)?;
    let n = m + 6;
    let t_col = table.index("t")?;
    let timestamps: Vec<f64> = table.rows.iter().map(|r| r[t_col]).collect();
    let q = table.matrix(&group("q", n))?;
    let dq = table.matrix(&group("dq", n))?;
    let tau = table.matrix(&group("tau", m))?;
    let c_idx = (0..4)
        .map(|i| table.index(&format!("c_{i}")))
        .collect::<Result<Vec<_>>>()?;
    let mut contact = Vec::with_capacity(table.rows.len());
    for (r, row) in table.rows.iter().enumerate() {
        let mut flags = [false; 4];
        for (foot, &c) in c_idx.iter().enumerate() {
            flags[foot] = match row[c] {
                0.0 => false,
                1.0 => true,
                v => {
                    return Err(Error::InvalidValue {
                        file: path.into(),
                        row: r + 1,
                        column: format!("c_{foot}"),
                        message: format!("contact flag must be 0 or 1, found {v}"),
                    })
                }
            };
        }
        contact.push(ContactFlags(flags));
    }
    let com_names: Vec<String> = COM_NAMES.iter().map(|s| s.to_string()).collect();
    let traj = Trajectory {
        name: path.display().to_string(),
        timestamps,
        q,
        dq,
        tau,
        contact,
        foot_forces: table.optional(&group("ff", 12))?,
        foot_positions: table.optional(&group("fp", 12))?,
        com_positions: table.optional(&com_names)?,
        leg_jacobians: table.optional(&jacobian_names())?,
    };
    traj.validate()?;
    Ok(traj)
}

/// Loads every jump file of a dataset directory.
///
/// With a `manifest.toml` the file list, `m`, `dt` and split come from the
/// manifest; otherwise all `*.csv` files are read in name order, `m` must
/// be supplied by `schema`, and every jump is assigned to the training
/// split.
pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<Dataset<Trajectory>> {
    if !path.is_dir() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let manifest_path = path.join(MANIFEST_FILE);
    let (files, split, metadata) = if manifest_path.exists() {
        let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| Error::Parse {
            path: manifest_path.clone(),
            offset: e.span().map_or(0, |s| s.start),
            message: e.message().to_string(),
        })?;
        if let Some(m) = schema.m {
            if m != manifest.m {
                return Err(Error::Config(format!(
                    "schema expects m = {m} but manifest declares m = {}",
                    manifest.m
                )));
            }
        }
        let files = manifest.jumps.iter().map(|j| path.join(&j.file)).collect::<Vec<_>>();
        let split = manifest.jumps.iter().map(|j| j.split).collect();
        let meta = DatasetMetadata {
            robot: manifest.robot,
            m: manifest.m,
            dt: manifest.dt,
            noise: manifest.noise,
        };
        (files, split, meta)
    } else {
        let m = schema
            .m
            .ok_or_else(|| Error::Config(format!("{}: no manifest and no joint count given", path.display())))?;
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        let split = vec![Split::Train; files.len()];
        let meta = DatasetMetadata {
            robot: "unknown".into(),
            m,
            dt: 0.0,
            noise: None,
        };
        (files, split, meta)
    };
    if metadata.m % 4 != 0 {
        return Err(Error::Config(format!("m = {} is not divisible by 4", metadata.m)));
    }

    let jumps = files
        .iter()
        .map(|f| read_trajectory(f, metadata.m, schema.delimiter))
        .collect::<Result<Vec<_>>>()?;
    let mut metadata = metadata;
    if metadata.dt == 0.0 {
        metadata.dt = jumps.first().map_or(0.0, |j| j.mean_dt());
    }
    for j in &jumps {
        let dt = j.mean_dt();
        if (dt - metadata.dt).abs() > 0.01 * metadata.dt {
            return Err(Error::InvalidValue {
                file: j.name.clone().into(),
                row: 0,
                column: "t".into(),
                message: format!("mean step {dt} s disagrees with dataset dt {} s", metadata.dt),
            });
        }
    }
    Ok(Dataset {
        jumps,
        split,
        metadata,
    })
}

fn fmt_f64(x: f64) -> String {
    format!("{x:.17e}")
}

/// Writes one jump in the per-jump file layout. Floats are written with 18
/// significant digits, which round-trips `f64` exactly.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let m = traj.joints();
    let mut header = header_names(m);
    if traj.foot_forces.is_some() {
        header.extend(group("ff", 12));
    }
    if traj.foot_positions.is_some() {
        header.extend(group("fp", 12));
    }
    if traj.com_positions.is_some() {
        header.extend(COM_NAMES.iter().map(|s| s.to_string()));
    }
    if traj.leg_jacobians.is_some() {
        header.extend(jacobian_names());
    }
    let mut writer = csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.into(),
        source,
    })?;
    let csv_err = |source| Error::Csv {
        path: path.into(),
        source,
    };
    writer.write_record(&header).map_err(csv_err)?;
    for k in 0..traj.len() {
        let mut row = Vec::with_capacity(header.len());
        row.push(fmt_f64(traj.timestamps[k]));
        row.extend(traj.q.row(k).iter().map(|&x| fmt_f64(x)));
        row.extend(traj.dq.row(k).iter().map(|&x| fmt_f64(x)));
        row.extend(traj.tau.row(k).iter().map(|&x| fmt_f64(x)));
        row.extend(traj.contact[k].0.iter().map(|&c| if c { "1" } else { "0" }.to_string()));
        for mat in [&traj.foot_forces, &traj.foot_positions, &traj.com_positions, &traj.leg_jacobians]
            .into_iter()
            .flatten()
        {
            row.extend(mat.row(k).iter().map(|&x| fmt_f64(x)));
        }
        writer.write_record(&row).map_err(|source| Error::Csv {
            path: path.into(),
            source,
        })?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes jump files `jump_000.csv`, ... and the manifest into `dir`.
pub fn save_dataset(dataset: &Dataset<Trajectory>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(dataset.len());
    for (i, (jump, split)) in dataset.jumps.iter().zip(&dataset.split).enumerate() {
        let file = format!("jump_{i:03}.csv");
        write_trajectory_csv(jump, &dir.join(&file))?;
        entries.push(ManifestEntry { file, split: *split });
    }
    let manifest = Manifest {
        robot: dataset.metadata.robot.clone(),
        m: dataset.metadata.m,
        dt: dataset.metadata.dt,
        noise: dataset.metadata.noise.clone(),
        jumps: entries,
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}
