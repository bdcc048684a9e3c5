//! Linear block codes and error injection: Hamming SEC constructions, a
//! SECDED extension, syndrome decoding, miscorrection measurement, and
//! per-chunk bitflip histograms.

use std::collections::BTreeMap;
use std::collections::HashMap;

use crate::engine::BitflipReport;
use crate::error::{Result, SimError};
use crate::rng::Stream;

/// Cap for exhaustive error-pattern enumeration.
pub const EXHAUSTIVE_CAP: u64 = 10_000_000;

// ---------------------------------------------------------------------------
// Bit vectors
// ---------------------------------------------------------------------------

/// Fixed-length bit vector backed by u64 words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bits {
    words: Vec<u64>,
    len: usize,
}

impl Bits {
    pub fn zeros(len: usize) -> Self {
        Bits {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] & (1 << (i % 64)) != 0
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        debug_assert!(i < self.len);
        if v {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    #[inline]
    pub fn flip(&mut self, i: usize) {
        self.words[i / 64] ^= 1 << (i % 64);
    }

    pub fn count_ones(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&i| self.get(i))
    }

    pub fn distance(&self, other: &Bits) -> u32 {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum()
    }
}

// ---------------------------------------------------------------------------
// Linear codes
// ---------------------------------------------------------------------------

/// A binary linear code described by its parity-check columns: column `j`
/// is the syndrome contribution of position `j` (low bit = first check).
/// SECDED codes add an overall parity bit on top of the Hamming checks.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearCode {
    n: usize,
    k: usize,
    columns: Vec<u32>,
    /// Positions solved during encoding, one per check row, in row order.
    parity_positions: Vec<usize>,
    /// For custom codes: per parity position, the mask of positions whose
    /// XOR yields that parity bit. Empty for unit-column constructions.
    parity_solve: Vec<Bits>,
    secded: bool,
    syndrome_to_pos: HashMap<u32, usize>,
    name: String,
}

impl LinearCode {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Storage overhead: parity bits per data bit, `(n - k) / k`.
    pub fn overhead(&self) -> f64 {
        (self.n - self.k) as f64 / self.k as f64
    }

    /// Classic (7,4) Hamming code: columns are 1..=7, parity at the
    /// power-of-two positions.
    pub fn hamming_7_4() -> Self {
        Self::shortened_hamming(7, 3, false, "hamming(7,4)")
    }

    /// Shortened (136,128) SEC Hamming code. The shipped construction takes
    /// the first 136 nonzero 8-bit column values in ascending binary order;
    /// the miscorrection rate is specific to this column choice and other
    /// shortenings will differ, which is why the construction is explicit
    /// and overridable via a custom parity-check matrix.
    pub fn sec_136_128() -> Self {
        Self::shortened_hamming(136, 8, false, "sec(136,128)")
    }

    /// (72,64) SECDED: extended Hamming with an overall parity bit.
    pub fn secded_72_64() -> Self {
        Self::shortened_hamming(72, 7, true, "secded(72,64)")
    }

    fn shortened_hamming(n: usize, checks: usize, secded: bool, name: &str) -> Self {
        let hamming_positions = if secded { n - 1 } else { n };
        assert!(hamming_positions < (1 << checks));
        let mut columns: Vec<u32> = (1..=hamming_positions as u32).collect();
        if secded {
            // The overall parity bit contributes nothing to the Hamming
            // syndrome.
            columns.push(0);
        }
        let mut parity_positions: Vec<usize> = (0..checks).map(|m| (1usize << m) - 1).collect();
        if secded {
            parity_positions.push(n - 1);
        }
        let k = n - parity_positions.len();
        let mut syndrome_to_pos = HashMap::new();
        for (j, &c) in columns.iter().enumerate() {
            if c != 0 {
                syndrome_to_pos.insert(c, j);
            }
        }
        LinearCode {
            n,
            k,
            columns,
            parity_positions,
            parity_solve: Vec::new(),
            secded,
            syndrome_to_pos,
            name: name.to_string(),
        }
    }

    /// Build a code from explicit parity-check rows (one Vec<bool> per
    /// check). Rows must be independent; columns must be nonzero.
    pub fn from_parity_check(rows: Vec<Vec<bool>>, name: &str) -> Result<Self> {
        let checks = rows.len();
        if checks == 0 || checks > 32 {
            return Err(SimError::Input("need 1..=32 parity-check rows".into()));
        }
        let n = rows[0].len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(SimError::Input("ragged parity-check matrix".into()));
        }
        let mut columns = vec![0u32; n];
        for (m, row) in rows.iter().enumerate() {
            for (j, &bit) in row.iter().enumerate() {
                if bit {
                    columns[j] |= 1 << m;
                }
            }
        }
        if columns.contains(&0) {
            return Err(SimError::Input(
                "parity-check matrix has an all-zero column".into(),
            ));
        }
        // Gaussian elimination to find pivot positions and the solve masks.
        let mut work: Vec<Bits> = rows
            .iter()
            .map(|r| {
                let mut b = Bits::zeros(n);
                for (j, &bit) in r.iter().enumerate() {
                    if bit {
                        b.set(j, true);
                    }
                }
                b
            })
            .collect();
        let mut pivots = Vec::with_capacity(checks);
        for r in 0..checks {
            let pivot = match (0..n).find(|&j| work[r].get(j) && !pivots.contains(&j)) {
                Some(j) => j,
                None => {
                    return Err(SimError::Input(
                        "parity-check rows are linearly dependent".into(),
                    ))
                }
            };
            for rr in 0..checks {
                if rr != r && work[rr].get(pivot) {
                    let (a, b) = if rr < r {
                        let (lo, hi) = work.split_at_mut(r);
                        (&mut lo[rr], &hi[0])
                    } else {
                        let (lo, hi) = work.split_at_mut(rr);
                        (&mut hi[0], &lo[r])
                    };
                    for (wa, wb) in a.words.iter_mut().zip(&b.words) {
                        *wa ^= wb;
                    }
                }
            }
            pivots.push(pivot);
        }
        let k = n - checks;
        let mut syndrome_to_pos = HashMap::new();
        for (j, &c) in columns.iter().enumerate() {
            syndrome_to_pos.entry(c).or_insert(j);
        }
        Ok(LinearCode {
            n,
            k,
            columns,
            parity_positions: pivots,
            parity_solve: work,
            secded: false,
            syndrome_to_pos,
            name: name.to_string(),
        })
    }

    /// Load a parity-check matrix from a text file: one row per line,
    /// single `0`/`1` characters, no separators.
    pub fn from_h_file(path: &std::path::Path, name: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut row = Vec::with_capacity(line.len());
            for ch in line.chars() {
                match ch {
                    '0' => row.push(false),
                    '1' => row.push(true),
                    _ => {
                        return Err(SimError::Input(format!(
                            "bad character {ch:?} in matrix line {}",
                            i + 1
                        )))
                    }
                }
            }
            rows.push(row);
        }
        Self::from_parity_check(rows, name)
    }

    fn syndrome(&self, word: &Bits) -> u32 {
        let mut s = 0;
        for j in word.ones() {
            s ^= self.columns[j];
        }
        s
    }

    /// Encode `data` (length k) into an n-bit codeword.
    pub fn encode(&self, data: &Bits) -> Result<Bits> {
        if data.len() != self.k {
            return Err(SimError::Input(format!(
                "data length {} != k {}",
                data.len(),
                self.k
            )));
        }
        let mut word = Bits::zeros(self.n);
        let mut di = 0;
        for j in 0..self.n {
            if self.parity_positions.contains(&j) {
                continue;
            }
            word.set(j, data.get(di));
            di += 1;
        }
        if self.parity_solve.is_empty() {
            // Unit parity columns: the data-only syndrome is the parity.
            let s = self.syndrome(&word);
            for (m, &pos) in self.parity_positions.iter().enumerate() {
                if self.secded && pos == self.n - 1 {
                    continue;
                }
                word.set(pos, s & (1 << m) != 0);
            }
            if self.secded {
                let parity = word.count_ones() % 2 == 1;
                word.set(self.n - 1, parity);
            }
        } else {
            for (row, &pos) in self.parity_solve.iter().zip(&self.parity_positions) {
                let mut bit = false;
                for j in row.ones() {
                    if j != pos && word.get(j) {
                        bit = !bit;
                    }
                }
                word.set(pos, bit);
            }
        }
        Ok(word)
    }

    /// Extract the data bits of a codeword.
    pub fn extract(&self, word: &Bits) -> Bits {
        let mut data = Bits::zeros(self.k);
        let mut di = 0;
        for j in 0..self.n {
            if self.parity_positions.contains(&j) {
                continue;
            }
            data.set(di, word.get(j));
            di += 1;
        }
        data
    }

    /// Syndrome decode: zero syndrome is clean, a syndrome matching a
    /// column flips that position, anything else is detected-uncorrectable.
    /// SECDED uses the overall parity to separate single from double
    /// errors.
    pub fn decode(&self, received: &Bits) -> Result<(DecodeKind, Bits)> {
        if received.len() != self.n {
            return Err(SimError::Input(format!(
                "received length {} != n {}",
                received.len(),
                self.n
            )));
        }
        let mut word = received.clone();
        let s = self.syndrome(received);
        if self.secded {
            let odd = received.count_ones() % 2 == 1;
            if s == 0 && !odd {
                return Ok((DecodeKind::Clean, word));
            }
            if odd {
                let pos = if s == 0 {
                    Some(self.n - 1)
                } else {
                    self.syndrome_to_pos.get(&s).copied()
                };
                return Ok(match pos {
                    Some(p) => {
                        word.flip(p);
                        (DecodeKind::Corrected(p), word)
                    }
                    None => (DecodeKind::DetectedUncorrectable, word),
                });
            }
            // Nonzero syndrome, even parity: an even number of errors.
            return Ok((DecodeKind::DetectedUncorrectable, word));
        }
        if s == 0 {
            return Ok((DecodeKind::Clean, word));
        }
        match self.syndrome_to_pos.get(&s) {
            Some(&p) => {
                word.flip(p);
                Ok((DecodeKind::Corrected(p), word))
            }
            None => Ok((DecodeKind::DetectedUncorrectable, word)),
        }
    }
}

/// What the decoder reported, before comparing against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeKind {
    Clean,
    Corrected(usize),
    DetectedUncorrectable,
}

/// Decoder report judged against the transmitted codeword.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub kind: OutcomeKind,
    /// Bit errors remaining after the decoder's action.
    pub residual_errors: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeKind {
    Clean,
    Corrected(usize),
    /// The decoder altered a bit yet errors remain: it made things worse.
    Miscorrected,
    DetectedUncorrectable,
}

/// Judge a decode against the original codeword.
pub fn decode_outcome(
    code: &LinearCode,
    original: &Bits,
    received: &Bits,
) -> Result<DecodeOutcome> {
    let (kind, corrected) = code.decode(received)?;
    let residual = corrected.distance(original);
    let kind = match kind {
        DecodeKind::Corrected(p) if residual > 0 => {
            let _ = p;
            OutcomeKind::Miscorrected
        }
        DecodeKind::Corrected(p) => OutcomeKind::Corrected(p),
        DecodeKind::Clean => OutcomeKind::Clean,
        DecodeKind::DetectedUncorrectable => OutcomeKind::DetectedUncorrectable,
    };
    Ok(DecodeOutcome {
        kind,
        residual_errors: residual,
    })
}

// ---------------------------------------------------------------------------
// Miscorrection measurement
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasureMode {
    /// Enumerate every weight-w pattern (error above [`EXHAUSTIVE_CAP`]).
    Exhaustive,
    MonteCarlo {
        trials: u64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiscorrectionRate {
    pub rate: f64,
    pub patterns: u64,
    pub miscorrections: u64,
}

/// Binomial coefficient with saturation.
fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k.min(n));
    let mut num: u128 = 1;
    for i in 0..k {
        num = num.saturating_mul((n - i) as u128);
        num /= (i + 1) as u128;
    }
    num.min(u64::MAX as u128) as u64
}

/// Fraction of weight-w error patterns the decoder turns into a
/// "corrected" word that still differs from the truth. Linearity lets the
/// measurement inject errors into the all-zero codeword.
pub fn miscorrection_rate(
    code: &LinearCode,
    weight: usize,
    mode: MeasureMode,
) -> Result<MiscorrectionRate> {
    if weight > code.n() {
        return Err(SimError::Input(format!(
            "weight {} exceeds n {}",
            weight,
            code.n()
        )));
    }
    let original = Bits::zeros(code.n());
    let mut patterns = 0u64;
    let mut miscorrections = 0u64;
    let check = |positions: &[usize], patterns: &mut u64, miscorrections: &mut u64| -> Result<()> {
        let mut received = Bits::zeros(code.n());
        for &p in positions {
            received.flip(p);
        }
        let outcome = decode_outcome(code, &original, &received)?;
        *patterns += 1;
        if outcome.kind == OutcomeKind::Miscorrected {
            *miscorrections += 1;
        }
        Ok(())
    };
    match mode {
        MeasureMode::Exhaustive => {
            let total = binomial(code.n() as u64, weight as u64);
            if total > EXHAUSTIVE_CAP {
                return Err(SimError::Mode(format!(
                    "{total} weight-{weight} patterns exceed the exhaustive cap"
                )));
            }
            // Lexicographic combinations.
            let mut idx: Vec<usize> = (0..weight).collect();
            if weight == 0 {
                check(&idx, &mut patterns, &mut miscorrections)?;
            } else {
                loop {
                    check(&idx, &mut patterns, &mut miscorrections)?;
                    // Advance.
                    let mut i = weight;
                    loop {
                        if i == 0 {
                            break;
                        }
                        i -= 1;
                        if idx[i] != i + code.n() - weight {
                            idx[i] += 1;
                            for j in i + 1..weight {
                                idx[j] = idx[j - 1] + 1;
                            }
                            break;
                        }
                        if i == 0 {
                            idx.clear();
                            break;
                        }
                    }
                    if idx.is_empty() {
                        break;
                    }
                }
            }
        }
        MeasureMode::MonteCarlo { trials, seed } => {
            let mut rng = Stream::new(seed);
            for _ in 0..trials {
                let positions: Vec<usize> = rng
                    .sample_distinct(code.n() as u64, weight)
                    .into_iter()
                    .map(|v| v as usize)
                    .collect();
                check(&positions, &mut patterns, &mut miscorrections)?;
            }
        }
    }
    Ok(MiscorrectionRate {
        rate: if patterns == 0 {
            0.0
        } else {
            miscorrections as f64 / patterns as f64
        },
        patterns,
        miscorrections,
    })
}

// ---------------------------------------------------------------------------
// Chunk histogram
// ---------------------------------------------------------------------------

/// Bin beyond which chunk counts are merged ("15+").
pub const CHUNK_BIN_CAP: usize = 15;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkHistogram {
    pub chunk_bits: usize,
    /// bin (flips per chunk, capped at 15) -> number of chunks.
    pub bins: BTreeMap<usize, usize>,
}

impl ChunkHistogram {
    /// Chunks whose flip count exceeds what SECDED can even detect.
    pub fn beyond_secded(&self) -> usize {
        self.bins
            .iter()
            .filter(|(&bin, _)| bin >= 3)
            .map(|(_, &n)| n)
            .sum()
    }
}

/// Partition each row into consecutive chunks of `chunk_bits` and count
/// flips per chunk.
pub fn chunk_histogram(report: &BitflipReport, chunk_bits: usize) -> ChunkHistogram {
    assert!(chunk_bits > 0);
    let mut per_chunk: HashMap<(usize, usize, usize), usize> = HashMap::new();
    for r in &report.records {
        *per_chunk
            .entry((r.bank, r.row, r.col / chunk_bits))
            .or_insert(0) += 1;
    }
    let mut bins = BTreeMap::new();
    for (_, count) in per_chunk {
        *bins.entry(count.min(CHUNK_BIN_CAP)).or_insert(0) += 1;
    }
    ChunkHistogram { chunk_bits, bins }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn data_from_u128(code: &LinearCode, v: u128) -> Bits {
        let mut d = Bits::zeros(code.k());
        for i in 0..code.k().min(128) {
            d.set(i, (v >> i) & 1 == 1);
        }
        d
    }

    #[test]
    fn overheads() {
        assert_eq!(LinearCode::hamming_7_4().overhead(), 0.75);
        assert_eq!(LinearCode::sec_136_128().overhead(), 0.0625);
        assert_eq!(LinearCode::secded_72_64().overhead(), 0.125);
    }

    #[test]
    fn clean_roundtrip() {
        for code in [
            LinearCode::hamming_7_4(),
            LinearCode::secded_72_64(),
            LinearCode::sec_136_128(),
        ] {
            let data = data_from_u128(&code, 0xDEADBEEFCAFEBABE);
            let word = code.encode(&data).unwrap();
            let (kind, corrected) = code.decode(&word).unwrap();
            assert_eq!(kind, DecodeKind::Clean, "{}", code.name());
            assert_eq!(code.extract(&corrected), data);
        }
    }

    #[test]
    fn single_errors_all_corrected() {
        for code in [
            LinearCode::hamming_7_4(),
            LinearCode::secded_72_64(),
            LinearCode::sec_136_128(),
        ] {
            let data = data_from_u128(&code, 0x1234_5678_9ABC_DEF0);
            let word = code.encode(&data).unwrap();
            for p in 0..code.n() {
                let mut rx = word.clone();
                rx.flip(p);
                let outcome = decode_outcome(&code, &word, &rx).unwrap();
                assert_eq!(
                    outcome.kind,
                    OutcomeKind::Corrected(p),
                    "{} pos {p}",
                    code.name()
                );
                assert_eq!(outcome.residual_errors, 0);
            }
        }
    }

    #[test]
    fn secded_detects_every_double_error() {
        let code = LinearCode::secded_72_64();
        let data = data_from_u128(&code, 0xFFFF_0000_FFFF_0000);
        let word = code.encode(&data).unwrap();
        for a in 0..code.n() {
            for b in (a + 1)..code.n() {
                let mut rx = word.clone();
                rx.flip(a);
                rx.flip(b);
                let outcome = decode_outcome(&code, &word, &rx).unwrap();
                assert_eq!(
                    outcome.kind,
                    OutcomeKind::DetectedUncorrectable,
                    "positions {a},{b}"
                );
            }
        }
    }

    #[test]
    fn sec_double_errors_never_clean() {
        let code = LinearCode::sec_136_128();
        let zero = Bits::zeros(code.n());
        for a in 0..code.n() {
            for b in (a + 1)..code.n() {
                let mut rx = Bits::zeros(code.n());
                rx.flip(a);
                rx.flip(b);
                let outcome = decode_outcome(&code, &zero, &rx).unwrap();
                assert_ne!(outcome.kind, OutcomeKind::Clean);
                assert!(matches!(
                    outcome.kind,
                    OutcomeKind::Miscorrected | OutcomeKind::DetectedUncorrectable
                ));
            }
        }
    }

    #[test]
    fn weight_one_miscorrection_is_zero() {
        let code = LinearCode::sec_136_128();
        let r = miscorrection_rate(&code, 1, MeasureMode::Exhaustive).unwrap();
        assert_eq!(r.miscorrections, 0);
        assert_eq!(r.patterns, 136);
    }

    #[test]
    fn exhaustive_double_error_count() {
        let code = LinearCode::sec_136_128();
        let r = miscorrection_rate(&code, 2, MeasureMode::Exhaustive).unwrap();
        assert_eq!(r.patterns, 9180);
        assert!(r.rate > 0.0 && r.rate < 1.0);
    }

    #[test]
    fn monte_carlo_matches_exhaustive_within_3_sigma() {
        let code = LinearCode::sec_136_128();
        let exact = miscorrection_rate(&code, 2, MeasureMode::Exhaustive).unwrap();
        let mc = miscorrection_rate(
            &code,
            2,
            MeasureMode::MonteCarlo {
                trials: 10_000,
                seed: 99,
            },
        )
        .unwrap();
        let sigma = (exact.rate * (1.0 - exact.rate) / 10_000.0).sqrt();
        assert!(
            (mc.rate - exact.rate).abs() <= 3.0 * sigma,
            "mc {} vs exact {} (sigma {sigma})",
            mc.rate,
            exact.rate
        );
    }

    #[test]
    fn monte_carlo_mean_converges_across_seeds() {
        let code = LinearCode::sec_136_128();
        let exact = miscorrection_rate(&code, 2, MeasureMode::Exhaustive).unwrap();
        let seeds = 20;
        let trials = 2_000;
        let mean: f64 = (0..seeds)
            .map(|s| {
                miscorrection_rate(
                    &code,
                    2,
                    MeasureMode::MonteCarlo {
                        trials,
                        seed: 1000 + s,
                    },
                )
                .unwrap()
                .rate
            })
            .sum::<f64>()
            / seeds as f64;
        let sigma_mean = (exact.rate * (1.0 - exact.rate) / (seeds as f64 * trials as f64)).sqrt();
        assert!(
            (mean - exact.rate).abs() <= 4.0 * sigma_mean,
            "pooled mean {mean} vs exact {} (sigma {sigma_mean})",
            exact.rate
        );
    }

    #[test]
    fn exhaustive_cap_is_a_mode_error() {
        let code = LinearCode::sec_136_128();
        assert!(matches!(
            miscorrection_rate(&code, 8, MeasureMode::Exhaustive),
            Err(SimError::Mode(_))
        ));
    }

    #[test]
    fn custom_h_roundtrip() {
        // (7,4) Hamming written out as an explicit matrix.
        let rows = vec![
            vec![true, false, true, false, true, false, true],
            vec![false, true, true, false, false, true, true],
            vec![false, false, false, true, true, true, true],
        ];
        let code = LinearCode::from_parity_check(rows, "custom(7,4)").unwrap();
        assert_eq!(code.k(), 4);
        for v in 0..16u128 {
            let data = data_from_u128(&code, v);
            let word = code.encode(&data).unwrap();
            let (kind, _) = code.decode(&word).unwrap();
            assert_eq!(kind, DecodeKind::Clean);
            for p in 0..code.n() {
                let mut rx = word.clone();
                rx.flip(p);
                let (kind, fixed) = code.decode(&rx).unwrap();
                assert_eq!(kind, DecodeKind::Corrected(p));
                assert_eq!(fixed, word);
            }
        }
    }

    #[test]
    fn parity_matrix_file_roundtrip() {
        let dir = std::env::temp_dir().join(format!("coldsim-ecc-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("h74.txt");
        std::fs::write(&path, "# (7,4) hamming\n1010101\n0110011\n0001111\n").unwrap();
        let code = LinearCode::from_h_file(&path, "file(7,4)").unwrap();
        assert_eq!((code.n(), code.k()), (7, 4));
        let data = data_from_u128(&code, 0b1011);
        let word = code.encode(&data).unwrap();
        assert_eq!(code.decode(&word).unwrap().0, DecodeKind::Clean);

        std::fs::write(&path, "10x\n").unwrap();
        assert!(LinearCode::from_h_file(&path, "bad").is_err());
        let _ = std::fs::remove_dir_all(dir);
    }

    #[test]
    fn length_mismatches_are_input_errors() {
        let code = LinearCode::hamming_7_4();
        assert!(matches!(
            code.encode(&Bits::zeros(5)),
            Err(SimError::Input(_))
        ));
        assert!(matches!(
            code.decode(&Bits::zeros(6)),
            Err(SimError::Input(_))
        ));
    }

    #[test]
    fn histogram_binning() {
        use crate::array::FlipDirection;
        use crate::engine::{BitflipRecord, FlipCause};
        let mk = |row: usize, col: usize| BitflipRecord {
            bank: 0,
            subarray: 0,
            row,
            col,
            time: 0.0,
            direction: FlipDirection::OneToZero,
            cause: FlipCause::ColumnDisturb,
        };
        let mut report = BitflipReport {
            records: vec![mk(0, 0), mk(0, 1), mk(0, 2), mk(1, 64)],
            ..Default::default()
        };
        let h = chunk_histogram(&report, 64);
        assert_eq!(h.bins.get(&3), Some(&1));
        assert_eq!(h.bins.get(&1), Some(&1));
        assert_eq!(h.beyond_secded(), 1);

        report.records.clear();
        let h = chunk_histogram(&report, 64);
        assert!(h.bins.is_empty());

        report.records = (0..20).map(|c| mk(3, c)).collect();
        let h = chunk_histogram(&report, 64);
        assert_eq!(h.bins.get(&CHUNK_BIN_CAP), Some(&1));
    }

    proptest! {
        #[test]
        fn roundtrip_decodes_clean(v in any::<u128>()) {
            let code = LinearCode::sec_136_128();
            let data = data_from_u128(&code, v);
            let word = code.encode(&data).unwrap();
            let (kind, corrected) = code.decode(&word).unwrap();
            prop_assert_eq!(kind, DecodeKind::Clean);
            prop_assert_eq!(code.extract(&corrected), data);
        }
    }
}
