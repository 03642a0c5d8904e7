//! Exit statuses and the machine-readable error record.

use std::fmt::Display;
use std::path::Path;

#[derive(Debug)]
pub enum Failure {
    /// Exit 2: the configuration does not parse or validate.
    Config(String),
    /// Exit 1: a module reported an error.
    Module { kind: &'static str, message: String },
}

pub type Res<T> = Result<T, Failure>;

impl Failure {
    pub fn module(kind: &'static str, message: impl Display) -> Self {
        Self::Module {
            kind,
            message: message.to_string(),
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
        move |e| Failure::module("io", format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Module { .. } => 1,
        }
    }

    /// One JSON line for standard error.
    pub fn record(&self, command: &str) -> String {
        let (kind, message) = match self {
            Self::Config(m) => ("config", m.as_str()),
            Self::Module { kind, message } => (*kind, message.as_str()),
        };
        serde_json::json!({
            "error": kind,
            "message": message,
            "command": command,
            "exit": self.exit_code(),
        })
        .to_string()
    }
}

/// Tags any displayable error with a module kind.
pub trait Context<T> {
    fn kind(self, kind: &'static str) -> Res<T>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn kind(self, kind: &'static str) -> Res<T> {
        self.map_err(|e| Failure::module(kind, e))
    }
}
