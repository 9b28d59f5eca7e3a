//! JSON-lines environment protocol, server side.
//!
//! Every message is one JSON object on one line and carries `"proto": 1`.
//!
//! | request                                   | response                                   |
//! |-------------------------------------------|--------------------------------------------|
//! | `{op:"reset", task_id, seed}`             | `{observation, action_space?}`             |
//! | `{op:"step", action}`                     | `{observation, done, success}`             |
//! | `{op:"close"}`                            | `{ack: true}`                              |
//!
//! Failures are answered with `{error: "..."}`. Unknown fields are ignored.

use std::io::{BufRead, Write};

use serde_json::{json, Map, Value};

use super::{parse_task_id, sample_task, World};

pub const PROTO_VERSION: u64 = 1;

/// Prefix of every rejection observation. Peers signal rejected actions this way.
pub const REJECTION_PREFIX: &str = "Nothing happens.";

pub fn is_rejection(observation: &str) -> bool {
    observation.trim_start().starts_with(REJECTION_PREFIX)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    Reset,
    Step,
    Close,
}

impl Op {
    pub fn as_str(self) -> &'static str {
        match self {
            Op::Reset => "reset",
            Op::Step => "step",
            Op::Close => "close",
        }
    }
}

pub fn reset_request(task_id: &str, seed: u64) -> Value {
    json!({"proto": PROTO_VERSION, "op": "reset", "task_id": task_id, "seed": seed})
}

pub fn step_request(action: &str) -> Value {
    json!({"proto": PROTO_VERSION, "op": "step", "action": action})
}

pub fn close_request() -> Value {
    json!({"proto": PROTO_VERSION, "op": "close"})
}

fn object(v: &Value) -> Result<&Map<String, Value>, String> {
    v.as_object().ok_or_else(|| "message is not a JSON object".to_string())
}

fn check_proto(m: &Map<String, Value>) -> Result<(), String> {
    match m.get("proto").and_then(Value::as_u64) {
        Some(PROTO_VERSION) => Ok(()),
        Some(v) => Err(format!("unsupported proto {v}")),
        None => Err("missing proto field".into()),
    }
}

fn require<'a>(m: &'a Map<String, Value>, field: &str, ty: &str) -> Result<&'a Value, String> {
    let v = m.get(field).ok_or_else(|| format!("missing field {field}"))?;
    let ok = match ty {
        "string" => v.is_string(),
        "bool" => v.is_boolean(),
        "u64" => v.is_u64(),
        _ => unreachable!("unknown field type {ty}"),
    };
    if ok {
        Ok(v)
    } else {
        Err(format!("field {field} must be {ty}"))
    }
}

/// Checks a request line against the protocol schema and returns its op.
pub fn validate_request(v: &Value) -> Result<Op, String> {
    let m = object(v)?;
    check_proto(m)?;
    match require(m, "op", "string")?.as_str().unwrap() {
        "reset" => {
            require(m, "task_id", "string")?;
            require(m, "seed", "u64")?;
            Ok(Op::Reset)
        }
        "step" => {
            require(m, "action", "string")?;
            Ok(Op::Step)
        }
        "close" => Ok(Op::Close),
        other => Err(format!("unknown op {other:?}")),
    }
}

/// Checks a response line against the schema for the request it answers.
/// Error responses are valid for every op.
pub fn validate_response(v: &Value, op: Op) -> Result<(), String> {
    let m = object(v)?;
    check_proto(m)?;
    if m.contains_key("error") {
        require(m, "error", "string")?;
        return Ok(());
    }
    match op {
        Op::Reset => {
            require(m, "observation", "string")?;
            if let Some(space) = m.get("action_space") {
                let ok = space
                    .as_array()
                    .is_some_and(|a| a.iter().all(Value::is_string));
                if !ok {
                    return Err("action_space must be a list of strings".into());
                }
            }
        }
        Op::Step => {
            require(m, "observation", "string")?;
            require(m, "done", "bool")?;
            require(m, "success", "bool")?;
        }
        Op::Close => {
            if m.get("ack") != Some(&Value::Bool(true)) {
                return Err("close must be acknowledged with ack=true".into());
            }
        }
    }
    Ok(())
}

fn error_response(msg: impl Into<String>) -> Value {
    json!({"proto": PROTO_VERSION, "error": msg.into()})
}

/// Serves the micro-world on one connection until `close` or end of input.
/// Malformed or out-of-order requests are answered with an error message and
/// the session continues.
pub fn serve(input: impl BufRead, mut output: impl Write, horizon: usize) -> std::io::Result<()> {
    let mut world: Option<World> = None;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (response, closing) = match serde_json::from_str::<Value>(&line) {
            Err(e) => (error_response(format!("malformed request: {e}")), false),
            Ok(req) => match validate_request(&req) {
                Err(e) => (error_response(format!("protocol violation: {e}")), false),
                Ok(Op::Close) => (json!({"proto": PROTO_VERSION, "ack": true}), true),
                Ok(Op::Reset) => {
                    let task_id = req["task_id"].as_str().unwrap();
                    let seed = req["seed"].as_u64().unwrap();
                    match parse_task_id(task_id) {
                        None => (error_response(format!("unknown task id {task_id:?}")), false),
                        Some((family, _)) => {
                            let (_, spec, _) = sample_task(family, seed);
                            let w = World::from_spec(&spec, horizon);
                            let obs = w.reset_observation();
                            world = Some(w);
                            (json!({"proto": PROTO_VERSION, "observation": obs}), false)
                        }
                    }
                }
                Ok(Op::Step) => match world.as_mut() {
                    None => (error_response("protocol violation: step before reset"), false),
                    Some(w) => {
                        let r = w.step(req["action"].as_str().unwrap());
                        (
                            json!({
                                "proto": PROTO_VERSION,
                                "observation": r.observation,
                                "done": r.done,
                                "success": r.success,
                            }),
                            false,
                        )
                    }
                },
            },
        };
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
        if closing {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transcript(requests: &[Value]) -> Vec<Value> {
        let input: String = requests.iter().map(|r| format!("{r}\n")).collect();
        let mut out = Vec::new();
        serve(input.as_bytes(), &mut out, 30).unwrap();
        String::from_utf8(out)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }

    #[test]
    fn step_before_reset_is_a_violation() {
        let out = transcript(&[step_request("look")]);
        assert!(out[0]["error"].as_str().unwrap().contains("step before reset"));
        assert!(validate_response(&out[0], Op::Step).is_ok());
    }

    #[test]
    fn every_response_conforms() {
        let reqs = vec![
            reset_request("put-7", 7),
            step_request("look"),
            step_request("fly to moon"),
            json!({"proto": 1, "op": "step", "action": "go to desk", "extra": [1, 2]}),
            close_request(),
        ];
        let out = transcript(&reqs);
        assert_eq!(out.len(), reqs.len());
        for (req, resp) in reqs.iter().zip(&out) {
            let op = validate_request(req).unwrap();
            validate_response(resp, op).unwrap();
            assert!(resp.get("error").is_none(), "{resp}");
        }
        assert!(is_rejection(out[2]["observation"].as_str().unwrap()));
    }

    #[test]
    fn missing_proto_is_reported() {
        let out = transcript(&[json!({"op": "close"})]);
        assert!(out[0]["error"].as_str().unwrap().contains("proto"));
    }

    #[test]
    fn close_stops_serving() {
        let out = transcript(&[close_request(), reset_request("put-1", 1)]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0]["ack"], true);
    }
}
