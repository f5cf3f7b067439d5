use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;

use super::GraphError;
use crate::rng::rng_from;

/// One rating. `user` and `item` index into the table's key lists.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RatingRecord {
    pub user: u32,
    pub item: u32,
    pub rating: u8,
    pub timestamp: Option<i64>,
}

/// Raw ratings as read from disk, after duplicate removal.
#[derive(Clone, Debug, Default)]
pub struct RatingsTable {
    pub user_keys: Vec<String>,
    pub item_keys: Vec<String>,
    pub records: Vec<RatingRecord>,
    /// Highest admissible rating level.
    pub max_rating: u8,
    /// Number of lines that failed to parse (non-strict mode).
    pub malformed: usize,
    /// 1-based line number of the first malformed line.
    pub first_malformed_line: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct ParseOptions {
    /// Fail on the first malformed line instead of counting it.
    pub strict: bool,
    pub max_rating: u8,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            strict: false,
            max_rating: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RatingsFormat {
    /// `UserID::MovieID::Rating::Timestamp`
    MovieLens,
    /// `user,item,rating,timestamp`, fractional ratings truncated.
    Amazon,
}

impl std::str::FromStr for RatingsFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "movielens" => Ok(RatingsFormat::MovieLens),
            "amazon" => Ok(RatingsFormat::Amazon),
            other => Err(format!(
                "unknown dataset format `{other}` (expected movielens|amazon)"
            )),
        }
    }
}

impl std::fmt::Display for RatingsFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RatingsFormat::MovieLens => "movielens",
            RatingsFormat::Amazon => "amazon",
        })
    }
}

pub fn parse_movielens(path: &Path, opts: &ParseOptions) -> Result<RatingsTable, GraphError> {
    parse_file(path, RatingsFormat::MovieLens, opts)
}

pub fn parse_amazon(path: &Path, opts: &ParseOptions) -> Result<RatingsTable, GraphError> {
    parse_file(path, RatingsFormat::Amazon, opts)
}

pub fn parse_file(
    path: &Path,
    format: RatingsFormat,
    opts: &ParseOptions,
) -> Result<RatingsTable, GraphError> {
    let file = File::open(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_reader(BufReader::new(file), format, opts).map_err(|e| match e {
        GraphError::Parse { line, message, .. } => GraphError::Parse {
            source_name: path.display().to_string(),
            line,
            message,
        },
        GraphError::Io { source, .. } => GraphError::Io {
            path: path.display().to_string(),
            source,
        },
        other => other,
    })
}

pub fn parse_reader<R: BufRead>(
    reader: R,
    format: RatingsFormat,
    opts: &ParseOptions,
) -> Result<RatingsTable, GraphError> {
    let mut builder = TableBuilder::new(opts.max_rating);
    for (n, line) in reader.lines().enumerate() {
        let line_no = n + 1;
        let line = line.map_err(|source| GraphError::Io {
            path: "<reader>".into(),
            source,
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line, format, opts.max_rating) {
            Ok((u, i, r, t)) => builder.push(u, i, r, t),
            Err(message) if opts.strict => {
                return Err(GraphError::Parse {
                    source_name: "<reader>".into(),
                    line: line_no,
                    message,
                })
            }
            Err(_) => {
                builder.table.malformed += 1;
                builder.table.first_malformed_line.get_or_insert(line_no);
            }
        }
    }
    Ok(builder.finish())
}

fn parse_line(
    line: &str,
    format: RatingsFormat,
    max_rating: u8,
) -> Result<(&str, &str, u8, Option<i64>), String> {
    let fields: Vec<&str> = match format {
        RatingsFormat::MovieLens => line.split("::").collect(),
        RatingsFormat::Amazon => line.split(',').collect(),
    };
    if fields.len() != 3 && fields.len() != 4 {
        return Err(format!("expected 4 fields, found {}", fields.len()));
    }
    let (user, item) = (fields[0].trim(), fields[1].trim());
    if user.is_empty() || item.is_empty() {
        return Err("empty user or item key".into());
    }
    if format == RatingsFormat::MovieLens
        && (user.parse::<u64>().is_err() || item.parse::<u64>().is_err())
    {
        return Err("non-integer id".into());
    }
    let raw = fields[2].trim();
    let rating = match format {
        RatingsFormat::MovieLens => raw
            .parse::<i64>()
            .map_err(|_| format!("bad rating `{raw}`"))?,
        RatingsFormat::Amazon => {
            let v = raw
                .parse::<f64>()
                .map_err(|_| format!("bad rating `{raw}`"))?;
            if !v.is_finite() {
                return Err(format!("bad rating `{raw}`"));
            }
            v.trunc() as i64
        }
    };
    if rating < 1 || rating > i64::from(max_rating) {
        return Err(format!("rating {rating} outside 1..={max_rating}"));
    }
    let timestamp = match fields.get(3) {
        Some(t) => Some(
            t.trim()
                .parse::<i64>()
                .map_err(|_| format!("bad timestamp `{}`", t.trim()))?,
        ),
        None => None,
    };
    Ok((user, item, rating as u8, timestamp))
}

struct TableBuilder {
    table: RatingsTable,
    users: HashMap<String, u32>,
    items: HashMap<String, u32>,
    pairs: HashMap<(u32, u32), usize>,
}

impl TableBuilder {
    fn new(max_rating: u8) -> Self {
        TableBuilder {
            table: RatingsTable {
                max_rating,
                ..RatingsTable::default()
            },
            users: HashMap::new(),
            items: HashMap::new(),
            pairs: HashMap::new(),
        }
    }

    fn intern(map: &mut HashMap<String, u32>, keys: &mut Vec<String>, key: &str) -> u32 {
        if let Some(&id) = map.get(key) {
            return id;
        }
        let id = keys.len() as u32;
        keys.push(key.to_string());
        map.insert(key.to_string(), id);
        id
    }

    fn push(&mut self, user: &str, item: &str, rating: u8, timestamp: Option<i64>) {
        let u = Self::intern(&mut self.users, &mut self.table.user_keys, user);
        let i = Self::intern(&mut self.items, &mut self.table.item_keys, item);
        let record = RatingRecord {
            user: u,
            item: i,
            rating,
            timestamp,
        };
        match self.pairs.get(&(u, i)) {
            // duplicates keep the rating with the latest timestamp; later lines win ties
            Some(&pos) => {
                if timestamp >= self.table.records[pos].timestamp {
                    self.table.records[pos] = record;
                }
            }
            None => {
                self.pairs.insert((u, i), self.table.records.len());
                self.table.records.push(record);
            }
        }
    }

    fn finish(self) -> RatingsTable {
        self.table
    }
}

impl RatingsTable {
    /// Builds a table from `(user, item, rating, timestamp)` tuples, applying
    /// the same duplicate rule as the file parsers.
    pub fn from_records<'a, I>(max_rating: u8, records: I) -> Self
    where
        I: IntoIterator<Item = (&'a str, &'a str, u8, Option<i64>)>,
    {
        let mut b = TableBuilder::new(max_rating);
        for (u, i, r, t) in records {
            b.push(u, i, r, t);
        }
        b.finish()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn distinct_users(&self) -> usize {
        count_distinct(self.records.iter().map(|r| r.user), self.user_keys.len())
    }

    pub fn distinct_items(&self) -> usize {
        count_distinct(self.records.iter().map(|r| r.item), self.item_keys.len())
    }

    fn with_records(&self, records: Vec<RatingRecord>) -> RatingsTable {
        RatingsTable {
            user_keys: self.user_keys.clone(),
            item_keys: self.item_keys.clone(),
            records,
            max_rating: self.max_rating,
            malformed: self.malformed,
            first_malformed_line: self.first_malformed_line,
        }
    }

    /// Keeps the records of a seeded random `fraction` of the users.
    pub fn subsample_users(&self, fraction: f64, seed: u64) -> RatingsTable {
        if fraction >= 1.0 {
            return self.clone();
        }
        let mut seen = vec![false; self.user_keys.len()];
        let mut users = Vec::new();
        for r in &self.records {
            if !seen[r.user as usize] {
                seen[r.user as usize] = true;
                users.push(r.user);
            }
        }
        users.shuffle(&mut rng_from(seed));
        let keep_n = (fraction.max(0.0) * users.len() as f64).round() as usize;
        let mut keep = vec![false; self.user_keys.len()];
        for &u in &users[..keep_n] {
            keep[u as usize] = true;
        }
        self.with_records(
            self.records
                .iter()
                .copied()
                .filter(|r| keep[r.user as usize])
                .collect(),
        )
    }
}

fn count_distinct(ids: impl Iterator<Item = u32>, bound: usize) -> usize {
    let mut seen = vec![false; bound];
    let mut n = 0;
    for id in ids {
        if !std::mem::replace(&mut seen[id as usize], true) {
            n += 1;
        }
    }
    n
}

/// Drops every user with fewer than `k` records. Single pass over users only;
/// items are not filtered and nothing is iterated to a fixed point.
pub fn filter_min_interactions(table: &RatingsTable, k: usize) -> RatingsTable {
    if k == 0 {
        return table.clone();
    }
    let mut counts = vec![0usize; table.user_keys.len()];
    for r in &table.records {
        counts[r.user as usize] += 1;
    }
    table.with_records(
        table
            .records
            .iter()
            .copied()
            .filter(|r| counts[r.user as usize] >= k)
            .collect(),
    )
}
