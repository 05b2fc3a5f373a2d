use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{group_steps, Episode, StateDoc, StateValue, Step};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(DataFormat::Csv),
            "jsonl" | "ndjson" => Some(DataFormat::Jsonl),
            _ => None,
        }
    }
}

/// Reads logged steps and groups them into episodes.
///
/// Rows must carry `member_id, t, state_json, action, reward`. Every row is
/// validated against `action_count` and the non-positive reward rule.
pub fn ingest(
    path: impl AsRef<Path>,
    format: DataFormat,
    action_count: usize,
) -> Result<Vec<Episode>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let steps = match format {
        DataFormat::Csv => read_csv(file)?,
        DataFormat::Jsonl => read_jsonl(file)?,
    };
    for (line, s) in &steps {
        s.validate(action_count).map_err(|e| Error::Parse {
            line: *line,
            message: e.to_string(),
        })?;
    }
    group_steps(steps.into_iter().map(|(_, s)| s).collect())
}

#[derive(Deserialize)]
struct CsvRow {
    member_id: String,
    t: String,
    state_json: String,
    action: String,
    reward: String,
}

fn read_csv(file: File) -> Result<Vec<(usize, Step)>> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(file));
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let perr = |message: String| Error::Parse { line, message };
        let row: CsvRow = rec.deserialize(None).map_err(|e| perr(e.to_string()))?;
        let state: Value =
            serde_json::from_str(&row.state_json).map_err(|e| perr(format!("state_json: {e}")))?;
        out.push((
            line,
            Step {
                member_id: row.member_id,
                t: row
                    .t
                    .trim()
                    .parse()
                    .map_err(|_| perr(format!("t: invalid time index {:?}", row.t)))?,
                state: parse_state(&state).map_err(perr)?,
                action: row
                    .action
                    .trim()
                    .parse()
                    .map_err(|_| perr(format!("action: invalid action {:?}", row.action)))?,
                reward: row
                    .reward
                    .trim()
                    .parse()
                    .map_err(|_| perr(format!("reward: invalid number {:?}", row.reward)))?,
            },
        ));
    }
    Ok(out)
}

fn read_jsonl(file: File) -> Result<Vec<(usize, Step)>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let perr = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let line = line.map_err(|e| perr(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| perr(e.to_string()))?;
        out.push((line_no, step_from_json(&v).map_err(perr)?));
    }
    Ok(out)
}

fn step_from_json(v: &Value) -> std::result::Result<Step, String> {
    let obj = v.as_object().ok_or("row is not a JSON object")?;
    let field = |k: &str| obj.get(k).ok_or_else(|| format!("missing field {k}"));
    let member_id = match field("member_id")? {
        Value::String(s) => s.clone(),
        Value::Number(n) => n.to_string(),
        _ => return Err("member_id: expected string".into()),
    };
    let t = field("t")?
        .as_u64()
        .ok_or("t: expected non-negative integer")?;
    let state = match field("state_json")? {
        Value::String(s) => serde_json::from_str(s).map_err(|e| format!("state_json: {e}"))?,
        other => other.clone(),
    };
    let action = field("action")?
        .as_u64()
        .ok_or("action: expected non-negative integer")? as usize;
    let reward = field("reward")?.as_f64().ok_or("reward: expected number")?;
    Ok(Step {
        member_id,
        t,
        state: parse_state(&state)?,
        action,
        reward,
    })
}

/// Converts a flat JSON object into a state document.
///
/// Nulls are dropped (treated as missing); nested values are rejected with
/// the offending key in the message.
pub fn parse_state(v: &Value) -> std::result::Result<StateDoc, String> {
    let obj = v.as_object().ok_or("state_json: expected a JSON object")?;
    let mut doc = StateDoc::new();
    for (k, val) in obj {
        let sv = match val {
            Value::Null => continue,
            Value::Bool(b) => StateValue::Bool(*b),
            Value::Number(n) => StateValue::Number(
                n.as_f64()
                    .ok_or_else(|| format!("state_json.{k}: not representable"))?,
            ),
            Value::String(s) => StateValue::Text(s.clone()),
            Value::Array(_) | Value::Object(_) => {
                return Err(format!("state_json.{k}: nested values are not supported"))
            }
        };
        doc.insert(k.clone(), sv);
    }
    Ok(doc)
}

fn state_json(doc: &StateDoc) -> String {
    serde_json::to_string(doc).expect("state documents always serialize")
}

pub fn write_csv(path: impl AsRef<Path>, episodes: &[Episode]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(["member_id", "t", "state_json", "action", "reward"])?;
    for s in episodes.iter().flat_map(|e| &e.steps) {
        w.write_record([
            s.member_id.clone(),
            s.t.to_string(),
            state_json(&s.state),
            s.action.to_string(),
            s.reward.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_jsonl(path: impl AsRef<Path>, episodes: &[Episode]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for s in episodes.iter().flat_map(|e| &e.steps) {
        let row = serde_json::json!({
            "member_id": s.member_id,
            "t": s.t,
            "state_json": s.state,
            "action": s.action,
            "reward": s.reward,
        });
        writeln!(w, "{row}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// SHA-256 over the canonical JSON encoding of the episodes.
pub fn data_hash(episodes: &[Episode]) -> String {
    let mut h = Sha256::new();
    for e in episodes {
        h.update(serde_json::to_vec(e).expect("episodes always serialize"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(contents: &str, ext: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::Builder::new().suffix(ext).tempfile().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    const HEADER: &str = "member_id,t,state_json,action,reward\n";

    #[test]
    fn csv_two_rows_one_episode() {
        let f = write(
            &format!("{HEADER}m1,0,\"{{\"\"a\"\": 1.5}}\",2,0\nm1,1,\"{{\"\"a\"\": 2, \"\"g\"\": \"\"x\"\"}}\",1,-1\n"),
            ".csv",
        );
        let eps = ingest(f.path(), DataFormat::Csv, 9).unwrap();
        assert_eq!(eps.len(), 1);
        assert_eq!(eps[0].len(), 2);
        assert_eq!(eps[0].steps[1].state["g"], StateValue::Text("x".into()));
    }

    #[test]
    fn csv_three_members_preserve_rows() {
        let mut s = HEADER.to_string();
        for (m, t) in [("a", 0), ("b", 0), ("a", 1), ("c", 3), ("b", 2)] {
            s.push_str(&format!("{m},{t},{{}},0,0\n"));
        }
        let f = write(&s, ".csv");
        let eps = ingest(f.path(), DataFormat::Csv, 2).unwrap();
        assert_eq!(eps.len(), 3);
        assert_eq!(super::super::total_steps(&eps), 5);
    }

    #[test]
    fn positive_reward_is_a_validation_error() {
        let f = write(&format!("{HEADER}m,0,{{}},0,0\nm,1,{{}},0,1\n"), ".csv");
        let err = ingest(f.path(), DataFormat::Csv, 2).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("non-positive"), "{message}");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn action_out_of_range_rejected() {
        let f = write(&format!("{HEADER}m,0,{{}},5,0\n"), ".csv");
        let err = ingest(f.path(), DataFormat::Csv, 5).unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn malformed_row_names_line() {
        let f = write(&format!("{HEADER}m,0,{{}},0,0\nm,zz,{{}},0,0\n"), ".csv");
        match ingest(f.path(), DataFormat::Csv, 2).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e}"),
        }
        let f = write(
            "{\"member_id\":\"m\",\"t\":0,\"state_json\":{},\"action\":0,\"reward\":0}\n{bad\n",
            ".jsonl",
        );
        match ingest(f.path(), DataFormat::Jsonl, 2).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn nested_state_rejected_with_key() {
        let err = parse_state(&serde_json::json!({"ok": 1, "bad": [1, 2]})).unwrap_err();
        assert!(err.contains("bad"));
    }

    #[test]
    fn jsonl_roundtrip_through_writer() {
        let eps = vec![Episode::new(
            "m",
            vec![
                super::super::step("m", 0, &[("k", 2.0)], 1, 0.0),
                super::super::step("m", 4, &[("k", 3.0)], 0, -1.0),
            ],
        )
        .unwrap()];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        write_jsonl(&p, &eps).unwrap();
        assert_eq!(ingest(&p, DataFormat::Jsonl, 2).unwrap(), eps);
        let p = dir.path().join("d.csv");
        write_csv(&p, &eps).unwrap();
        let back = ingest(&p, DataFormat::Csv, 2).unwrap();
        assert_eq!(back, eps);
        assert_eq!(data_hash(&back), data_hash(&eps));
    }
}
