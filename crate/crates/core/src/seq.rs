//! Sequences, endpoint pairs and substitution paths.
//!
//! Positions are 0-based everywhere in this module. Anything rendered for a
//! user (FASTA errors, path dumps) is converted to 1-based at the boundary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, PathFault, Result};

/// Ordered set of distinct ASCII symbols. Lookup is case-insensitive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    symbols: Vec<u8>,
    index: [Option<u8>; 256],
}

impl Alphabet {
    pub fn new(symbols: &str) -> Result<Self> {
        if !symbols.is_ascii() {
            return Err(Error::Alphabet("symbols must be ASCII".into()));
        }
        let symbols: Vec<u8> = symbols.bytes().map(|b| b.to_ascii_uppercase()).collect();
        if symbols.len() < 2 {
            return Err(Error::Alphabet("need at least two symbols".into()));
        }
        if symbols.len() > 64 {
            return Err(Error::Alphabet("at most 64 symbols are supported".into()));
        }
        let mut index = [None; 256];
        for (i, &s) in symbols.iter().enumerate() {
            if s == b'-' || s == b'>' || s.is_ascii_whitespace() || s == b':' {
                return Err(Error::Alphabet(format!("reserved symbol {:?}", s as char)));
            }
            if index[s as usize].is_some() {
                return Err(Error::Alphabet(format!("duplicate symbol {:?}", s as char)));
            }
            index[s as usize] = Some(i as u8);
        }
        Ok(Alphabet { symbols, index })
    }

    /// DNA in the fixed order A, C, G, T.
    pub fn dna() -> Self {
        Alphabet::new("ACGT").expect("static alphabet")
    }

    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn index_of(&self, symbol: char) -> Option<u8> {
        if !symbol.is_ascii() {
            return None;
        }
        self.index[symbol.to_ascii_uppercase() as usize]
    }

    pub fn symbol(&self, index: u8) -> char {
        self.symbols[index as usize] as char
    }

    pub fn symbols(&self) -> impl Iterator<Item = char> + '_ {
        self.symbols.iter().map(|&b| b as char)
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Alphabet::dna()
    }
}

/// A fixed-length string of alphabet indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sequence {
    bases: Vec<u8>,
}

impl Sequence {
    pub fn from_indices(bases: Vec<u8>, alphabet: &Alphabet) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::InvalidArgument("sequence must be non-empty".into()));
        }
        if let Some(pos) = bases.iter().position(|&b| b as usize >= alphabet.size()) {
            return Err(Error::InvalidArgument(format!(
                "base index {} at position {} outside alphabet",
                bases[pos],
                pos + 1
            )));
        }
        Ok(Sequence { bases })
    }

    pub fn parse(text: &str, alphabet: &Alphabet) -> Result<Self> {
        let bases = text
            .chars()
            .enumerate()
            .map(|(i, c)| alphabet.index_of(c).ok_or(Error::Symbol { symbol: c, position: i + 1 }))
            .collect::<Result<Vec<u8>>>()?;
        Sequence::from_indices(bases, alphabet)
    }

    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    pub fn bases(&self) -> &[u8] {
        &self.bases
    }

    pub fn get(&self, site: usize) -> u8 {
        self.bases[site]
    }

    pub(crate) fn set(&mut self, site: usize, base: u8) {
        self.bases[site] = base;
    }

    pub fn render(&self, alphabet: &Alphabet) -> String {
        self.bases.iter().map(|&b| alphabet.symbol(b)).collect()
    }
}

/// Start and end sequences together with the observed mutated sites.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequencePair {
    start: Sequence,
    end: Sequence,
    mutated: Vec<usize>,
}

impl SequencePair {
    pub fn new(start: Sequence, end: Sequence) -> Result<Self> {
        if start.len() != end.len() {
            return Err(Error::LengthMismatch(start.len(), end.len()));
        }
        let mutated = (0..start.len()).filter(|&i| start.get(i) != end.get(i)).collect();
        Ok(SequencePair { start, end, mutated })
    }

    pub fn parse(start: &str, end: &str, alphabet: &Alphabet) -> Result<Self> {
        SequencePair::new(Sequence::parse(start, alphabet)?, Sequence::parse(end, alphabet)?)
    }

    pub fn start(&self) -> &Sequence {
        &self.start
    }

    pub fn end(&self) -> &Sequence {
        &self.end
    }

    /// Sequence length n.
    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    /// Observed mutated sites, ascending.
    pub fn mutated_sites(&self) -> &[usize] {
        &self.mutated
    }

    /// Hamming distance r.
    pub fn hamming(&self) -> usize {
        self.mutated.len()
    }

    pub fn to_fasta(&self, alphabet: &Alphabet, names: (&str, &str)) -> String {
        let mut out = String::new();
        for (name, seq) in [(names.0, &self.start), (names.1, &self.end)] {
            out.push('>');
            out.push_str(name);
            out.push('\n');
            let text = seq.render(alphabet);
            for chunk in text.as_bytes().chunks(60) {
                out.push_str(std::str::from_utf8(chunk).expect("ascii"));
                out.push('\n');
            }
        }
        out
    }
}

/// Hamming distance between two equal-length sequences.
pub fn hamming(a: &Sequence, b: &Sequence) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.bases.iter().zip(&b.bases).filter(|(x, y)| x != y).count())
}

/// One substitution: at `time`, `site` changes to `base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub time: f64,
    pub site: usize,
    pub base: u8,
}

/// Time-ordered jump record on [0, horizon].
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub horizon: f64,
    pub jumps: Vec<Jump>,
}

impl Path {
    pub fn empty(horizon: f64) -> Self {
        Path { horizon, jumps: Vec::new() }
    }

    /// Number of jumps m(P).
    pub fn len(&self) -> usize {
        self.jumps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.jumps.is_empty()
    }

    /// Jumps at one site, in time order.
    pub fn site_path(&self, site: usize) -> Path {
        Path {
            horizon: self.horizon,
            jumps: self.jumps.iter().copied().filter(|j| j.site == site).collect(),
        }
    }
}

/// Outcome of replaying a path from the start sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCheck {
    pub fault: Option<PathFault>,
    pub terminal: Sequence,
}

impl PathCheck {
    pub fn is_valid(&self) -> bool {
        self.fault.is_none()
    }
}

/// Replays `path` from `pair.start()` and checks it is a legal path ending in
/// `pair.end()`: strictly increasing times inside (0, T) and every jump
/// changing its site. The terminal sequence is returned either way.
pub fn validate_path(path: &Path, pair: &SequencePair) -> PathCheck {
    let mut seq = pair.start.clone();
    let n = seq.len();
    let mut last = 0.0;
    let mut fault = None;
    for (index, jump) in path.jumps.iter().enumerate() {
        if !(jump.time > last && jump.time < path.horizon) {
            fault.get_or_insert(PathFault::TimeOrder { index });
        }
        last = jump.time;
        if jump.site >= n {
            fault.get_or_insert(PathFault::OutOfRange { index });
            continue;
        }
        if seq.get(jump.site) == jump.base {
            fault.get_or_insert(PathFault::NonMutatingJump { index });
        }
        seq.set(jump.site, jump.base);
    }
    if fault.is_none() && seq != pair.end {
        fault = Some(PathFault::WrongEndpoint);
    }
    PathCheck { fault, terminal: seq }
}

pub(crate) fn require_valid(path: &Path, pair: &SequencePair) -> Result<()> {
    match validate_path(path, pair).fault {
        None => Ok(()),
        Some(f) => Err(Error::InvalidPath(f)),
    }
}

/// Interleaves jumps (already tagged with their sites) into one strictly
/// increasing sequence. Ties are ordered by site index and the later jump is
/// moved to the next representable time.
pub(crate) fn merge_jumps(horizon: f64, mut jumps: Vec<Jump>) -> Path {
    jumps.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.site.cmp(&b.site)));
    for i in 1..jumps.len() {
        if jumps[i].time <= jumps[i - 1].time {
            jumps[i].time = jumps[i - 1].time.next_up();
        }
    }
    Path { horizon, jumps }
}

/// Merges independently sampled per-site paths into one global path.
pub fn merge_site_paths(per_site: Vec<(usize, Path)>) -> Result<Path> {
    let horizon = match per_site.first() {
        Some((_, p)) => p.horizon,
        None => return Err(Error::InvalidArgument("no site paths to merge".into())),
    };
    let mut jumps = Vec::new();
    for (site, path) in per_site {
        if path.horizon != horizon {
            return Err(Error::InvalidArgument("site paths have different horizons".into()));
        }
        jumps.extend(path.jumps.into_iter().map(|j| Jump { site, ..j }));
    }
    Ok(merge_jumps(horizon, jumps))
}

/// Reads exactly two FASTA records over `alphabet`.
///
/// Multi-line records and blank lines are accepted and bases are matched
/// case-insensitively. Symbols outside the alphabet (including ambiguity
/// codes such as N) are rejected with their line number.
pub fn parse_fasta_pair(text: &str, alphabet: &Alphabet) -> Result<SequencePair> {
    struct Record {
        header_line: usize,
        bases: Vec<u8>,
    }
    let mut records: Vec<Record> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('>') {
            if records.len() == 2 {
                return Err(Error::Fasta { line: line_no, msg: "more than two records".into() });
            }
            records.push(Record { header_line: line_no, bases: Vec::new() });
            continue;
        }
        let Some(record) = records.last_mut() else {
            return Err(Error::Fasta { line: line_no, msg: "sequence data before the first '>' header".into() });
        };
        for (col, c) in line.chars().enumerate() {
            if c.is_whitespace() {
                continue;
            }
            match alphabet.index_of(c) {
                Some(b) => record.bases.push(b),
                None => {
                    return Err(Error::Fasta {
                        line: line_no,
                        msg: format!("symbol {:?} at column {} is not in the alphabet", c, col + 1),
                    })
                }
            }
        }
    }
    if records.len() != 2 {
        let line = text.lines().count().max(1);
        return Err(Error::Fasta { line, msg: format!("expected two records, found {}", records.len()) });
    }
    for r in &records {
        if r.bases.is_empty() {
            return Err(Error::Fasta { line: r.header_line, msg: "record has no sequence".into() });
        }
    }
    let end = records.pop().expect("two records");
    let start = records.pop().expect("two records");
    if start.bases.len() != end.bases.len() {
        return Err(Error::Fasta {
            line: end.header_line,
            msg: format!("unequal lengths ({} vs {})", start.bases.len(), end.bases.len()),
        });
    }
    SequencePair::new(
        Sequence::from_indices(start.bases, alphabet)?,
        Sequence::from_indices(end.bases, alphabet)?,
    )
}

#[derive(Serialize, Deserialize)]
struct JumpRecord {
    t: f64,
    site: usize,
    base: String,
}

/// One JSON object per line: `{"t":0.1,"site":3,"base":"G"}` with 1-based sites.
pub fn path_to_jsonl(path: &Path, alphabet: &Alphabet) -> String {
    let mut out = String::new();
    for j in &path.jumps {
        let rec = JumpRecord { t: j.time, site: j.site + 1, base: alphabet.symbol(j.base).to_string() };
        out.push_str(&serde_json::to_string(&rec).expect("plain struct"));
        out.push('\n');
    }
    out
}

pub fn path_from_jsonl(text: &str, alphabet: &Alphabet, horizon: f64) -> Result<Path> {
    let mut jumps = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec: JumpRecord = serde_json::from_str(line)?;
        let mut chars = rec.base.chars();
        let base = match (chars.next(), chars.next()) {
            (Some(c), None) => alphabet
                .index_of(c)
                .ok_or_else(|| Error::InvalidArgument(format!("base {:?} not in alphabet", rec.base)))?,
            _ => return Err(Error::InvalidArgument(format!("base {:?} is not one symbol", rec.base))),
        };
        if rec.site == 0 {
            return Err(Error::InvalidArgument("sites are 1-based".into()));
        }
        jumps.push(Jump { time: rec.t, site: rec.site - 1, base });
    }
    Ok(Path { horizon, jumps })
}
