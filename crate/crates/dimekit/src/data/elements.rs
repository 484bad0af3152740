//! Element symbol and mass tables for the supported atomic numbers.

use crate::error::{Error, Result};

/// (atomic number, symbol, standard atomic weight in amu)
const TABLE: &[(u32, &str, f64)] = &[
    (1, "H", 1.008),
    (2, "He", 4.0026),
    (3, "Li", 6.94),
    (4, "Be", 9.0122),
    (5, "B", 10.81),
    (6, "C", 12.011),
    (7, "N", 14.007),
    (8, "O", 15.999),
    (9, "F", 18.998),
    (10, "Ne", 20.180),
];

pub fn symbol_to_z(symbol: &str) -> Option<u32> {
    TABLE.iter().find(|(_, s, _)| *s == symbol).map(|&(z, _, _)| z)
}

pub fn z_to_symbol(z: u32) -> Result<&'static str> {
    TABLE
        .iter()
        .find(|&&(tz, _, _)| tz == z)
        .map(|&(_, s, _)| s)
        .ok_or_else(|| Error::Input(format!("no symbol for atomic number {z}")))
}

/// Atomic mass in amu.
pub fn mass_of(z: u32) -> Result<f64> {
    TABLE
        .iter()
        .find(|&&(tz, _, _)| tz == z)
        .map(|&(_, _, m)| m)
        .ok_or_else(|| Error::Input(format!("no mass for atomic number {z}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_round_trip() {
        for z in 1..=10 {
            let s = z_to_symbol(z).unwrap();
            assert_eq!(symbol_to_z(s), Some(z));
        }
        assert_eq!(symbol_to_z("Xx"), None);
        assert!(z_to_symbol(99).is_err());
    }
}
