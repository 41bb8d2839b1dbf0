//! JSONL dataset persistence: a header object followed by one record per
//! sample, `{traj, k, x, u, x_next}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Normalization, Sample, SampleSet};
use crate::error::{CoreError, Result};

const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    dt: f64,
    state_dim: usize,
    input_dim: usize,
    hover_thrust_offset: f64,
    normalization: Option<Normalization>,
    n_trajectories: usize,
    n_samples: usize,
}

#[derive(Serialize, Deserialize)]
struct Record {
    traj: usize,
    k: usize,
    x: Vec<f64>,
    u: Vec<f64>,
    x_next: Vec<f64>,
}

pub fn save(set: &SampleSet, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    let header = Header {
        schema_version: SCHEMA_VERSION,
        dt: set.dt,
        state_dim: set.state_dim,
        input_dim: set.input_dim,
        hover_thrust_offset: set.hover_thrust_offset,
        normalization: set.normalization.clone(),
        n_trajectories: set.num_trajectories(),
        n_samples: set.num_samples(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for (t, traj) in set.trajectories.iter().enumerate() {
        for (k, s) in traj.iter().enumerate() {
            let record = Record {
                traj: t,
                k,
                x: s.x.clone(),
                u: s.u.clone(),
                x_next: s.x_next.clone(),
            };
            serde_json::to_writer(&mut w, &record)?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<SampleSet> {
    let file = File::open(path)?;
    let mut lines = BufReader::new(file).lines();

    let header_line = lines
        .next()
        .ok_or_else(|| CoreError::DatasetFormat {
            line: 1,
            msg: "missing header".into(),
        })?
        .map_err(CoreError::Io)?;
    let header: Header =
        serde_json::from_str(&header_line).map_err(|e| CoreError::DatasetFormat {
            line: 1,
            msg: format!("bad header: {e}"),
        })?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(CoreError::DatasetFormat {
            line: 1,
            msg: format!(
                "schema version {} unsupported (expected {SCHEMA_VERSION})",
                header.schema_version
            ),
        });
    }

    let mut trajectories: Vec<Vec<Sample>> = vec![Vec::new(); header.n_trajectories];
    let mut count = 0usize;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line.map_err(CoreError::Io)?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record =
            serde_json::from_str(&line).map_err(|e| CoreError::DatasetFormat {
                line: line_no,
                msg: e.to_string(),
            })?;
        if record.traj >= header.n_trajectories {
            return Err(CoreError::DatasetFormat {
                line: line_no,
                msg: format!("trajectory index {} out of range", record.traj),
            });
        }
        if record.x.len() != header.state_dim
            || record.x_next.len() != header.state_dim
            || record.u.len() != header.input_dim
        {
            return Err(CoreError::DatasetFormat {
                line: line_no,
                msg: "record dimensions do not match header".into(),
            });
        }
        let traj = &mut trajectories[record.traj];
        if record.k != traj.len() {
            return Err(CoreError::DatasetFormat {
                line: line_no,
                msg: format!(
                    "sample index {} out of order (expected {})",
                    record.k,
                    traj.len()
                ),
            });
        }
        traj.push(Sample {
            x: record.x,
            u: record.u,
            x_next: record.x_next,
        });
        count += 1;
    }
    if count != header.n_samples {
        return Err(CoreError::DatasetFormat {
            line: count + 2,
            msg: format!(
                "file truncated: {count} records found, header declares {}",
                header.n_samples
            ),
        });
    }
    Ok(SampleSet {
        trajectories,
        dt: header.dt,
        state_dim: header.state_dim,
        input_dim: header.input_dim,
        hover_thrust_offset: header.hover_thrust_offset,
        normalization: header.normalization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{collect, CollectConfig};
    use crate::sim::SimConfig;

    fn tiny_set() -> SampleSet {
        let cfg = CollectConfig {
            total_duration: 3.0,
            trajectories: 3,
            seed: 5,
            ..Default::default()
        };
        let mut sim_cfg = SimConfig::default();
        sim_cfg.noise.enabled = false;
        collect(&cfg, &sim_cfg).unwrap()
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let set = tiny_set();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save(&set, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(set, loaded);
    }

    #[test]
    fn truncated_file_errors_with_line_number() {
        let set = tiny_set();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save(&set, &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        let keep = lines.len() - 10;
        std::fs::write(&path, lines[..keep].join("\n")).unwrap();
        match load(&path) {
            Err(CoreError::DatasetFormat { line, .. }) => assert_eq!(line, keep + 1),
            other => panic!("expected truncation error, got {other:?}"),
        }

        // Corrupt a record mid-file: the reported line must match.
        save(&set, &path).unwrap();
        let mut lines: Vec<String> = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        lines[41] = lines[41][..lines[41].len() / 2].to_string();
        std::fs::write(&path, lines.join("\n")).unwrap();
        match load(&path) {
            Err(CoreError::DatasetFormat { line, .. }) => assert_eq!(line, 42),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn record_count_matches_protocol() {
        let set = tiny_set();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        save(&set, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        // Header plus M_t * M_s records.
        assert_eq!(text.lines().count(), 1 + 3 * 50);
    }
}
