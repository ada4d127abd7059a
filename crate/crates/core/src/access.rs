//! Which role may do what. Front ends check this before calling the
//! repository.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Operator,
    Supervisor,
    Specialist,
    Admin,
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_lowercase().as_str() {
            "operator" => Ok(Role::Operator),
            "supervisor" => Ok(Role::Supervisor),
            "specialist" => Ok(Role::Specialist),
            "admin" => Ok(Role::Admin),
            other => Err(Error::ConfigInvalid(format!("unknown role {other:?}"))),
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Operation {
    ReadCatalog,
    ImportCatalog,
    EditCatalog,
    VerifyCatalog,
    ReadPatients,
    RegisterPatient,
    SubmitResult,
    ReadReviewQueue,
    OverrideResult,
    RejectResult,
    BuildReport,
    SignOffReport,
    ReadReport,
    ReadAudit,
}

impl Operation {
    pub const ALL: [Operation; 14] = [
        Operation::ReadCatalog,
        Operation::ImportCatalog,
        Operation::EditCatalog,
        Operation::VerifyCatalog,
        Operation::ReadPatients,
        Operation::RegisterPatient,
        Operation::SubmitResult,
        Operation::ReadReviewQueue,
        Operation::OverrideResult,
        Operation::RejectResult,
        Operation::BuildReport,
        Operation::SignOffReport,
        Operation::ReadReport,
        Operation::ReadAudit,
    ];

    pub fn allowed_roles(self) -> &'static [Role] {
        use Role::*;
        match self {
            Operation::ReadCatalog | Operation::ReadPatients | Operation::ReadReport => {
                &[Operator, Supervisor, Specialist, Admin]
            }
            Operation::ImportCatalog | Operation::EditCatalog => &[Specialist, Admin],
            Operation::VerifyCatalog => &[Specialist],
            Operation::RegisterPatient => &[Operator, Supervisor, Admin],
            Operation::SubmitResult | Operation::BuildReport => &[Operator, Supervisor],
            Operation::ReadReviewQueue | Operation::ReadAudit => &[Supervisor, Admin],
            Operation::OverrideResult | Operation::RejectResult | Operation::SignOffReport => &[Supervisor],
        }
    }
}

pub fn permits(role: Role, operation: Operation) -> bool {
    operation.allowed_roles().contains(&role)
}
