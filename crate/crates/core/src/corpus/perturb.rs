//! Counterfactual database edits: shifted medal years and remapped medal types.

use std::collections::HashMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::generate::{medal_year_window, MEDAL_TYPES};
use crate::sandbox::{DatabaseInstance, Value};

pub const PERTURB_FRACTION: f64 = 0.3;

/// Birth year per medal row index, following medal → format → tournament →
/// personalinformation.
fn medal_birth_years(db: &DatabaseInstance) -> Vec<Option<i64>> {
    let rows = |t: &str| db.table_rows(t).unwrap_or(&[]);
    let birth: HashMap<i64, i64> =
        rows("personalinformation").iter().filter_map(|r| Some((r[0].as_i64()?, r[1].as_i64()?))).collect();
    let tournament_athlete: HashMap<i64, i64> =
        rows("tournament").iter().filter_map(|r| Some((r[0].as_i64()?, r[1].as_i64()?))).collect();
    let format_tournament: HashMap<i64, i64> =
        rows("format").iter().filter_map(|r| Some((r[0].as_i64()?, r[1].as_i64()?))).collect();
    rows("medal")
        .iter()
        .map(|m| {
            let t = format_tournament.get(&m[1].as_i64()?)?;
            let a = tournament_athlete.get(t)?;
            birth.get(a).copied()
        })
        .collect()
}

/// Returns a copy of `db` with 30% of medal rows edited (at least one): each
/// chosen row gets its year shifted by ±1..±5 inside the athlete's valid
/// window, its medal type remapped, or both. Schema and keys are untouched.
pub fn perturb_counterfactual(db: &DatabaseInstance, seed: u64, new_id: &str) -> DatabaseInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let births = medal_birth_years(db);
    let mut out = db.clone();
    out.id = new_id.to_string();
    let Some(medals) = out.table_rows_mut("medal") else { return out };
    if medals.is_empty() {
        return out;
    }
    let n = ((medals.len() as f64 * PERTURB_FRACTION).round() as usize).clamp(1, medals.len());
    let mut chosen = sample(&mut rng, medals.len(), n).into_vec();
    chosen.sort_unstable();

    for i in chosen {
        let row = &mut medals[i];
        // 0: year only, 1: type only, 2: both
        let mode = rng.gen_range(0..3);
        let mut changed = false;
        if mode != 1 {
            if let (Some(year), Some(birth)) = (row[2].as_i64(), births[i]) {
                let (lo, hi) = medal_year_window(birth);
                let shifts: Vec<i64> =
                    (-5..=5).filter(|&d| d != 0 && (lo..=hi).contains(&(year + d))).collect();
                if !shifts.is_empty() {
                    row[2] = Value::Integer(year + shifts[rng.gen_range(0..shifts.len())]);
                    changed = true;
                }
            }
        }
        if mode != 0 || !changed {
            let current = row[4].as_str().unwrap_or_default().to_string();
            let others: Vec<&str> = MEDAL_TYPES.iter().copied().filter(|t| *t != current).collect();
            row[4] = Value::text(others[rng.gen_range(0..others.len())]);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate::generate_database;

    #[test]
    fn perturbation_keeps_integrity_and_changes_rows() {
        let db = generate_database(7, 20);
        let cf = perturb_counterfactual(&db, 11, "cf");
        cf.validate().unwrap();
        assert_eq!(cf.schema, db.schema);
        let before = db.table_rows("medal").unwrap();
        let after = cf.table_rows("medal").unwrap();
        let changed = before.iter().zip(after).filter(|(a, b)| a != b).count();
        let expected = (before.len() as f64 * 0.3).round() as usize;
        assert!(changed >= 1 && changed <= expected, "{changed} of {}", before.len());
        for table in ["athlete", "personalinformation", "tournament", "format"] {
            assert_eq!(db.table_rows(table), cf.table_rows(table));
        }
    }

    #[test]
    fn perturbation_is_seeded() {
        let db = generate_database(3, 10);
        assert_eq!(perturb_counterfactual(&db, 5, "x"), perturb_counterfactual(&db, 5, "x"));
    }

    #[test]
    fn shifted_years_respect_age_window() {
        let db = generate_database(9, 25);
        let cf = perturb_counterfactual(&db, 1, "cf");
        let births = medal_birth_years(&cf);
        for (row, birth) in cf.table_rows("medal").unwrap().iter().zip(births) {
            let age = row[2].as_i64().unwrap() - birth.unwrap();
            assert!((15..=45).contains(&age));
            let year = row[2].as_i64().unwrap();
            assert!((1980..=2024).contains(&year));
        }
    }
}
