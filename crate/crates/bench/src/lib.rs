//! Workloads shared by the benchmarks.

use std::fmt::Write as _;

use quantum_core::{parse_native, validate, QumModel};

/// A model of `n` identical, independent components, each with a two-state
/// normal machine and one failure pattern.
pub fn cloned_components(n: usize) -> String {
    let mut s = String::from("model Clones\n");
    for i in 1..=n {
        let _ = write!(
            s,
            "\ncomponent Unit{i} {{\n  normal Work{i} {{\n    state Up initial\n    state Degraded\n    \
             transition Up -> Degraded stochastic 0.1\n    transition Degraded -> Up stochastic 1.0\n  }}\n  \
             failure Broken{i} {{\n    state Dead initial config unit{i}_dead OR\n    \
             transition * -> Dead failure 0.0001\n  }}\n}}\n"
        );
    }
    s
}

/// Parses and validates native model text that is known to be well formed.
pub fn load(src: &str) -> QumModel {
    validate(&parse_native(src).expect("benchmark model parses")).expect("benchmark model is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clones_validate() {
        let m = load(&cloned_components(3));
        assert_eq!(m.components.len(), 3);
        assert_eq!(m.state_configs.len(), 3);
    }
}
