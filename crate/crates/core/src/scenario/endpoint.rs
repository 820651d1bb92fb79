//! Line-oriented control endpoint: `switch <name>...`, `set <controllet>
//! <param> <value>`, `stop`.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::manager::{ControlHandle, Response, SwitchOutcome};

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Switch(Vec<String>),
    Set { controllet: String, key: String, value: f64 },
    Stop,
}

pub fn parse_command(line: &str) -> Result<Command> {
    let mut words = line.split_whitespace();
    let verb = words.next().ok_or_else(|| Error::Config("empty command".into()))?;
    let rest: Vec<&str> = words.collect();
    match (verb, rest.as_slice()) {
        ("switch", names) if !names.is_empty() => Ok(Command::Switch(names.iter().map(|s| s.to_string()).collect())),
        ("switch", _) => Err(Error::Config("usage: switch <name> [<name>...]".into())),
        ("set", [c, k, v]) => {
            let value = v.parse::<f64>().map_err(|_| Error::Config(format!("`{v}` is not a number")))?;
            Ok(Command::Set { controllet: c.to_string(), key: k.to_string(), value })
        }
        ("set", _) => Err(Error::Config("usage: set <controllet> <param> <value>".into())),
        ("stop", []) => Ok(Command::Stop),
        ("stop", _) => Err(Error::Config("usage: stop".into())),
        (other, _) => Err(Error::Config(format!("unknown command `{other}`"))),
    }
}

/// Submits commands to a running controller and formats one status line
/// per command.
pub struct Endpoint {
    handle: ControlHandle,
    dt: f64,
    timeout: Duration,
}

impl Endpoint {
    pub fn new(handle: ControlHandle, dt: f64) -> Self {
        Self { handle, dt, timeout: Duration::from_secs(2) }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Executes one line and waits for the controller's reply.
    pub fn execute(&self, line: &str) -> String {
        let command = match parse_command(line) {
            Ok(c) => c,
            Err(e) => return format!("error {e}"),
        };
        let id = match &command {
            Command::Switch(names) => self.handle.request_switch(names),
            Command::Set { controllet, key, value } => self.handle.set_param(controllet, key, *value),
            Command::Stop => self.handle.stop(),
        };
        let id = match id {
            Ok(id) => id,
            Err(e) => return format!("error {e}"),
        };
        let start = Instant::now();
        loop {
            if let Some(response) = self.handle.poll_response() {
                if let Some(line) = self.format(id, &response) {
                    return line;
                }
            }
            if start.elapsed() > self.timeout {
                return format!("error request {id} timed out");
            }
            std::thread::sleep(Duration::from_micros(200));
        }
    }

    fn format(&self, id: u64, response: &Response) -> Option<String> {
        match response {
            Response::Switch(r) if r.id == id => Some(match &r.outcome {
                SwitchOutcome::Accepted | SwitchOutcome::NoOp => format!(
                    "ok switch {} latency_ms {:.3} wall_ms {:.3}",
                    id,
                    r.latency_ms(self.dt).unwrap_or(0.0),
                    r.wall_latency.map_or(0.0, |d| d.as_secs_f64() * 1e3)
                ),
                SwitchOutcome::Conflict(list) => {
                    let text: Vec<String> = list.iter().map(|(r, a, b)| format!("{r}:{a}/{b}")).collect();
                    format!("rejected switch {id} conflict {}", text.join(","))
                }
                SwitchOutcome::Superseded => format!("rejected switch {id} superseded"),
            }),
            Response::Param { id: rid, result } if *rid == id => Some(match result {
                Ok(()) => format!("ok set {id}"),
                Err(e) => format!("error set {id} {e}"),
            }),
            Response::Stopped { id: rid } if *rid == id => Some(format!("ok stop {id}")),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_the_three_verbs() {
        assert_eq!(parse_command("switch DC CA").unwrap(), Command::Switch(vec!["DC".into(), "CA".into()]));
        assert_eq!(
            parse_command("set DC k_c.0 500").unwrap(),
            Command::Set { controllet: "DC".into(), key: "k_c.0".into(), value: 500.0 }
        );
        assert_eq!(parse_command("  stop ").unwrap(), Command::Stop);
        for bad in ["", "switch", "set DC k", "set DC k x", "stop now", "jump"] {
            assert!(parse_command(bad).is_err(), "{bad}");
        }
    }
}
