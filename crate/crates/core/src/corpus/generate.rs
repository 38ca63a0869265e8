//! Fixed athlete/medal schema and seeded database generation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sandbox::{Column, ColumnType, DatabaseInstance, ForeignKey, SchemaDescription, TableSchema, Value};

pub const MIN_YEAR: i64 = 1980;
pub const MAX_YEAR: i64 = 2024;
pub const MIN_MEDAL_AGE: i64 = 15;
pub const MAX_MEDAL_AGE: i64 = 45;
pub const MEDAL_TYPES: [&str; 3] = ["gold", "silver", "bronze"];
pub const LEVELS: [&str; 3] = ["International", "Continental", "National"];

const FIRST_NAMES: [&str; 32] = [
    "Simon", "Takaharu", "Valeria", "Aron", "Shevon", "Charlotte", "Marta", "Kenji", "Amara", "Lucas", "Ingrid",
    "Tomasz", "Priya", "Diego", "Hana", "Olu", "Mei", "Rafael", "Sofia", "Jonas", "Leila", "Mateo", "Yuki", "Nadia",
    "Kofi", "Elena", "Arjun", "Freya", "Bruno", "Zara", "Ivan", "Noor",
];

const LAST_NAMES: [&str; 32] = [
    "Fairweather", "Furukawa", "Kumizaki", "Szilagyi", "Lai", "Dujardin", "Novak", "Tanaka", "Okafor", "Moreau",
    "Berg", "Kowalski", "Raman", "Alvarez", "Sato", "Adeyemi", "Chen", "Costa", "Rossi", "Weber", "Haddad", "Silva",
    "Mori", "Petrova", "Mensah", "Ionescu", "Mehta", "Larsen", "Ferreira", "Khan", "Volkov", "Aziz",
];

const COUNTRIES: [&str; 10] =
    ["Australia", "Japan", "Brazil", "Hungary", "Malaysia", "France", "India", "Nigeria", "Italy", "Canada"];

const CITIES: [&str; 24] = [
    "Milan", "Cairo", "Kraków", "Antalya", "Basel", "London", "Kuala Lumpur", "Tokyo", "Lima", "Sydney", "Doha",
    "Berlin", "Nairobi", "Osaka", "Lyon", "Porto", "Seoul", "Montreal", "Oslo", "Delhi", "Athens", "Jakarta",
    "Budapest", "Rio de Janeiro",
];

/// Tournament names with their competition level.
const TOURNAMENTS: [(&str, &str); 9] = [
    ("Olympic Games", "International"),
    ("World Championships", "International"),
    ("World Cup", "International"),
    ("European Championships", "Continental"),
    ("Asian Games", "Continental"),
    ("Pan American Games", "Continental"),
    ("Commonwealth Games", "Continental"),
    ("National Championships", "National"),
    ("National Cup", "National"),
];

const FORMATS: [&str; 5] = ["Individual", "Team", "Doubles", "Mixed Team", "Relay"];

fn table(name: &str, columns: &[(&str, ColumnType)], pk: Option<&str>) -> TableSchema {
    TableSchema {
        name: name.into(),
        columns: columns.iter().map(|&(n, t)| Column::new(n, t)).collect(),
        primary_key: pk.map(str::to_string),
    }
}

fn fk(child: &str, child_col: &str, parent: &str, parent_col: &str) -> ForeignKey {
    ForeignKey {
        child_table: child.into(),
        child_column: child_col.into(),
        parent_table: parent.into(),
        parent_column: parent_col.into(),
    }
}

/// The five-table athlete schema. Foreign keys chain
/// medal → format → tournament → athlete, plus personalinformation → athlete.
pub fn generate_schema() -> SchemaDescription {
    use ColumnType::{Integer, Text};
    SchemaDescription {
        tables: vec![
            table("athlete", &[("athlete_id", Integer), ("name", Text)], Some("athlete_id")),
            table(
                "personalinformation",
                &[("athlete_id", Integer), ("birth_year", Integer), ("country", Text)],
                Some("athlete_id"),
            ),
            table(
                "tournament",
                &[("tournament_id", Integer), ("athlete_id", Integer), ("name", Text), ("level", Text)],
                Some("tournament_id"),
            ),
            table("format", &[("format_id", Integer), ("tournament_id", Integer), ("name", Text)], Some("format_id")),
            table(
                "medal",
                &[("medal_id", Integer), ("format_id", Integer), ("year", Integer), ("city", Text), ("medal_type", Text)],
                Some("medal_id"),
            ),
        ],
        foreign_keys: vec![
            fk("personalinformation", "athlete_id", "athlete", "athlete_id"),
            fk("tournament", "athlete_id", "athlete", "athlete_id"),
            fk("format", "tournament_id", "tournament", "tournament_id"),
            fk("medal", "format_id", "format", "format_id"),
        ],
    }
}

/// Inclusive range of years in which an athlete born in `birth_year` can hold a medal.
pub fn medal_year_window(birth_year: i64) -> (i64, i64) {
    ((birth_year + MIN_MEDAL_AGE).max(MIN_YEAR), (birth_year + MAX_MEDAL_AGE).min(MAX_YEAR))
}

pub fn generate_database(seed: u64, n_athletes: usize) -> DatabaseInstance {
    generate_database_with_id(&format!("gen{seed}"), seed, n_athletes)
}

/// Populates the schema with `n_athletes` athletes. Each athlete gets 2–4
/// tournaments, 1–2 formats per tournament and 1–3 medals per format, with
/// every medal year inside the athlete's 15–45 age window.
pub fn generate_database_with_id(id: &str, seed: u64, n_athletes: usize) -> DatabaseInstance {
    assert!(n_athletes >= 1, "need at least one athlete");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut db = DatabaseInstance::empty(id, generate_schema());

    let mut names: Vec<(usize, usize)> =
        (0..FIRST_NAMES.len()).flat_map(|f| (0..LAST_NAMES.len()).map(move |l| (f, l))).collect();
    names.shuffle(&mut rng);
    assert!(n_athletes <= names.len(), "at most {} distinct athletes", names.len());

    let (mut tournament_id, mut format_id, mut medal_id) = (0i64, 0i64, 0i64);
    for (i, &(f, l)) in names.iter().take(n_athletes).enumerate() {
        let athlete_id = i as i64 + 1;
        let name = format!("{} {}", FIRST_NAMES[f], LAST_NAMES[l]);
        db.rows[0].push(vec![Value::Integer(athlete_id), Value::Text(name)]);

        let birth_year = rng.gen_range(1950..=1995);
        let country = COUNTRIES[rng.gen_range(0..COUNTRIES.len())];
        db.rows[1].push(vec![Value::Integer(athlete_id), Value::Integer(birth_year), Value::text(country)]);
        let (lo, hi) = medal_year_window(birth_year);

        let n_tournaments = rng.gen_range(2..=4);
        let chosen: Vec<&(&str, &str)> = TOURNAMENTS.choose_multiple(&mut rng, n_tournaments).collect();
        for &&(t_name, level) in &chosen {
            tournament_id += 1;
            db.rows[2].push(vec![
                Value::Integer(tournament_id),
                Value::Integer(athlete_id),
                Value::text(t_name),
                Value::text(level),
            ]);
            let n_formats = rng.gen_range(1..=2);
            let formats: Vec<&&str> = FORMATS.choose_multiple(&mut rng, n_formats).collect();
            for &&f_name in &formats {
                format_id += 1;
                db.rows[3].push(vec![Value::Integer(format_id), Value::Integer(tournament_id), Value::text(f_name)]);
                for _ in 0..rng.gen_range(1..=3) {
                    medal_id += 1;
                    let year = rng.gen_range(lo..=hi);
                    let city = CITIES[rng.gen_range(0..CITIES.len())];
                    let kind = MEDAL_TYPES[rng.gen_range(0..MEDAL_TYPES.len())];
                    db.rows[4].push(vec![
                        Value::Integer(medal_id),
                        Value::Integer(format_id),
                        Value::Integer(year),
                        Value::text(city),
                        Value::text(kind),
                    ]);
                }
            }
        }
    }
    db
}

/// One medal joined up to its athlete.
#[derive(Clone, Debug, PartialEq)]
pub struct MedalView {
    pub medal_index: usize,
    pub year: i64,
    pub city: String,
    pub medal_type: String,
    pub tournament: String,
    pub level: String,
}

/// Denormalized per-athlete view used to choose satisfiable question slots.
#[derive(Clone, Debug, PartialEq)]
pub struct AthleteView {
    pub athlete_id: i64,
    pub name: String,
    pub birth_year: Option<i64>,
    pub tournaments: Vec<String>,
    pub medals: Vec<MedalView>,
}

/// Walks the foreign-key chain by hand (no engine involved).
pub fn athlete_views(db: &DatabaseInstance) -> Vec<AthleteView> {
    let rows = |t: &str| db.table_rows(t).unwrap_or(&[]);
    let mut views: Vec<AthleteView> = rows("athlete")
        .iter()
        .map(|r| AthleteView {
            athlete_id: r[0].as_i64().unwrap_or_default(),
            name: r[1].as_str().unwrap_or_default().to_string(),
            birth_year: None,
            tournaments: Vec::new(),
            medals: Vec::new(),
        })
        .collect();
    let by_id = |views: &mut Vec<AthleteView>, id: i64| views.iter().position(|v| v.athlete_id == id);
    for r in rows("personalinformation") {
        if let Some(i) = by_id(&mut views, r[0].as_i64().unwrap_or(-1)) {
            views[i].birth_year = r[1].as_i64();
        }
    }
    let tournaments = rows("tournament");
    for t in tournaments {
        if let Some(i) = by_id(&mut views, t[1].as_i64().unwrap_or(-1)) {
            views[i].tournaments.push(t[2].as_str().unwrap_or_default().to_string());
        }
    }
    let formats = rows("format");
    for (mi, m) in rows("medal").iter().enumerate() {
        let Some(f) = formats.iter().find(|f| f[0] == m[1]) else { continue };
        let Some(t) = tournaments.iter().find(|t| t[0] == f[1]) else { continue };
        let Some(i) = by_id(&mut views, t[1].as_i64().unwrap_or(-1)) else { continue };
        views[i].medals.push(MedalView {
            medal_index: mi,
            year: m[2].as_i64().unwrap_or_default(),
            city: m[3].as_str().unwrap_or_default().to_string(),
            medal_type: m[4].as_str().unwrap_or_default().to_string(),
            tournament: t[2].as_str().unwrap_or_default().to_string(),
            level: t[3].as_str().unwrap_or_default().to_string(),
        });
    }
    views
}
