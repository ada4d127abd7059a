use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cdr_core::patient::DEFAULT_UID_PATTERN;
use cdr_core::{Role, UidPolicy};
use serde::Deserialize;

use crate::error::ServeError;

/// What a bearer token stands for.
#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct TokenGrant {
    pub role: Role,
    pub actor_id: String,
}

/// Service configuration, normally read from a TOML file:
///
/// ```toml
/// port = 8080
/// store_path = "/var/lib/cdr"
/// uid_pattern = "^[A-Z]-?[0-9]{4,}$"
///
/// [tokens.op-token]
/// role = "Operator"
/// actor_id = "op1"
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_port")]
    pub port: u16,
    pub store_path: PathBuf,
    #[serde(default = "default_uid_pattern")]
    pub uid_pattern: String,
    #[serde(default)]
    pub tokens: BTreeMap<String, TokenGrant>,
}

fn default_port() -> u16 {
    8080
}

fn default_uid_pattern() -> String {
    DEFAULT_UID_PATTERN.to_string()
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ServeError> {
        let config: Config = toml::from_str(text).map_err(|e| ServeError::ConfigInvalid(e.message().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ServeError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServeError::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn uid_policy(&self) -> Result<UidPolicy, ServeError> {
        UidPolicy::new(&self.uid_pattern).map_err(|e| ServeError::ConfigInvalid(e.to_string()))
    }

    fn validate(&self) -> Result<(), ServeError> {
        if self.store_path.as_os_str().is_empty() {
            return Err(ServeError::ConfigInvalid("store_path must not be empty".into()));
        }
        self.uid_policy()?;
        for (token, grant) in &self.tokens {
            if token.trim().is_empty() || grant.actor_id.trim().is_empty() {
                return Err(ServeError::ConfigInvalid("tokens and actor ids must not be blank".into()));
            }
        }
        Ok(())
    }
}
