use std::fmt;

use serde::Serialize;
use sigregime_core::Error as CoreError;

/// Failure category, mapped one-to-one onto process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    Config,
    Data,
    Numeric,
    Io,
}

impl Category {
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Data => 3,
            Category::Numeric => 4,
            Category::Io => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    pub category: Category,
    pub message: String,
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            category: Category::Config,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError {
            category: Category::Data,
            message: msg.into(),
        }
    }

    pub fn io(msg: impl Into<String>) -> Self {
        CliError {
            category: Category::Io,
            message: msg.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.category.exit_code()
    }

    pub fn context(mut self, ctx: &str) -> Self {
        self.message = format!("{ctx}: {}", self.message);
        self
    }

    /// One-line JSON form for machine consumers.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.category, "message": self.message }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.category {
            Category::Config => "config error",
            Category::Data => "data error",
            Category::Numeric => "numeric error",
            Category::Io => "i/o error",
        };
        write!(f, "{tag}: {}", self.message)
    }
}

impl std::error::Error for CliError {}

/// Library failures are sorted by what the user has to change: parameters
/// (config), the input series (data), or nothing they control (numeric).
impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let category = match e {
            CoreError::Argument(_) | CoreError::Shape(_) | CoreError::Config(_) | CoreError::Capacity(_) => {
                Category::Config
            }
            CoreError::Domain(_) | CoreError::Range(_) => Category::Data,
            CoreError::Numeric(_) | CoreError::Degenerate(_) => Category::Numeric,
        };
        CliError {
            category,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::io(e.to_string())
    }
}
