//! Bundled example models. The native and XMI variants of each model
//! describe the same system.

use crate::model::{validate, QumModel};

/// Airbag control unit: sensors, microcontroller, FET and FASIC, with the
/// `inadvertent_deployment` hazard configuration.
pub const AIRBAG_QUM: &str = include_str!("../fixtures/airbag.qum");
pub const AIRBAG_XMI: &str = include_str!("../fixtures/airbag.xmi");

/// A single failure-only component with the `pump_dry` configuration.
pub const MINIMAL_QUM: &str = include_str!("../fixtures/minimal.qum");
pub const MINIMAL_XMI: &str = include_str!("../fixtures/minimal.xmi");

pub const AIRBAG_HAZARD: &str = "inadvertent_deployment";

/// Validated airbag model from the native text.
pub fn airbag() -> QumModel {
    let raw = crate::ingest::parse_native(AIRBAG_QUM).expect("bundled fixture parses");
    validate(&raw).expect("bundled fixture validates")
}

pub fn minimal() -> QumModel {
    let raw = crate::ingest::parse_native(MINIMAL_QUM).expect("bundled fixture parses");
    validate(&raw).expect("bundled fixture validates")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::parse_xmi;

    #[test]
    fn front_ends_agree() {
        let x = validate(&parse_xmi(AIRBAG_XMI.as_bytes()).unwrap()).unwrap();
        assert_eq!(x, airbag());
        let x = validate(&parse_xmi(MINIMAL_XMI.as_bytes()).unwrap()).unwrap();
        assert_eq!(x, minimal());
    }
}
