//! Transaction/block data model and the JSON Lines trace format.
//!
//! A trace is UTF-8 JSON Lines with one object per transaction:
//!
//! ```text
//! {"hash":"0x…64hex","block":7,"index":0,"gasUsed":21000,"accounts":["0x…40hex",…]}
//! ```
//!
//! Unknown keys are ignored on read and never emitted on write. Addresses
//! are stored as raw 20-byte values internally and rendered as 0x-prefixed
//! lowercase hex at the boundary.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{self, BufRead, Write};

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::scalar::GasScalar;
use crate::Gas;

/// Hex string did not match the expected `0x` + fixed-width form.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad hex value {got:?}: want 0x-prefixed {want}-digit hex")]
pub struct HexError {
    pub want: usize,
    pub got: String,
}

fn parse_fixed_hex<const N: usize>(s: &str) -> Result<[u8; N], HexError> {
    let err = || HexError {
        want: 2 * N,
        got: s.to_string(),
    };
    let digits = s.strip_prefix("0x").ok_or_else(err)?;
    if digits.len() != 2 * N {
        return Err(err());
    }
    let mut out = [0u8; N];
    hex::decode_to_slice(digits, &mut out).map_err(|_| err())?;
    Ok(out)
}

/// 20-byte account address.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Account([u8; 20]);

impl Account {
    pub fn new(bytes: [u8; 20]) -> Self {
        Account(bytes)
    }

    /// Accepts upper- or lowercase hex with a `0x` prefix.
    pub fn from_hex(s: &str) -> Result<Self, HexError> {
        parse_fixed_hex(s).map(Account)
    }

    pub fn as_bytes(&self) -> &[u8; 20] {
        &self.0
    }
}

impl fmt::Display for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Account({self})")
    }
}

/// 32-byte transaction hash.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TxHash([u8; 32]);

impl TxHash {
    pub fn new(bytes: [u8; 32]) -> Self {
        TxHash(bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, HexError> {
        parse_fixed_hex(s).map(TxHash)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for TxHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", hex::encode(self.0))
    }
}

impl fmt::Debug for TxHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TxHash({self})")
    }
}

macro_rules! hex_serde {
    ($ty:ident) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
                ser.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
                let s = <&str>::deserialize(de)?;
                $ty::from_hex(s).map_err(D::Error::custom)
            }
        }
    };
}

hex_serde!(Account);
hex_serde!(TxHash);

/// One transaction: consensus position, gas cost and account access list.
///
/// Field order matches the canonical key order of the trace format.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "G: Serialize",
    deserialize = "G: Deserialize<'de>"
))]
pub struct TransactionRecord<G: GasScalar = Gas> {
    pub hash: TxHash,
    #[serde(rename = "block")]
    pub block_number: u64,
    pub index: u64,
    #[serde(rename = "gasUsed")]
    pub gas_used: G,
    pub accounts: BTreeSet<Account>,
}

impl<G: GasScalar> TransactionRecord<G> {
    pub fn new(
        hash: TxHash,
        block_number: u64,
        index: u64,
        gas_used: G,
        accounts: impl IntoIterator<Item = Account>,
    ) -> Self {
        TransactionRecord {
            hash,
            block_number,
            index,
            gas_used,
            accounts: accounts.into_iter().collect(),
        }
    }
}

/// One block's transactions in ascending index (consensus) order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockTrace<G: GasScalar = Gas> {
    pub block_number: u64,
    pub transactions: Vec<TransactionRecord<G>>,
}

impl<G: GasScalar> BlockTrace<G> {
    pub fn new(block_number: u64, mut transactions: Vec<TransactionRecord<G>>) -> Self {
        transactions.sort_by_key(|tx| tx.index);
        BlockTrace {
            block_number,
            transactions,
        }
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    pub fn total_gas(&self) -> G {
        self.transactions.iter().map(|tx| tx.gas_used).sum()
    }

    pub fn max_gas(&self) -> Option<G> {
        self.transactions.iter().map(|tx| tx.gas_used).max()
    }
}

/// Whether a zero `gasUsed` is rejected or clamped to 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ParseMode {
    /// Reject `gasUsed: 0`.
    #[default]
    Strict,
    /// Clamp `gasUsed: 0` to 1. Zero-weight tasks would break the
    /// strictly-decreasing rank argument of the list scheduler.
    Lenient,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("line {line}: duplicate transaction (block {block}, index {index})")]
    DuplicateIndex { line: usize, block: u64, index: u64 },
    #[error("line {line}: gasUsed is 0 (strict mode requires gasUsed >= 1)")]
    ZeroGas { line: usize },
    #[error("line {line}: block {block} reappears after other blocks (streaming requires block-contiguous traces)")]
    NonContiguousBlock { line: usize, block: u64 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_line<G>(raw: &str, line: usize, mode: ParseMode) -> Result<TransactionRecord<G>, TraceError>
where
    G: GasScalar + serde::de::DeserializeOwned,
{
    let mut record: TransactionRecord<G> =
        serde_json::from_str(raw).map_err(|source| TraceError::Malformed { line, source })?;
    if record.gas_used.is_zero() {
        match mode {
            ParseMode::Strict => return Err(TraceError::ZeroGas { line }),
            ParseMode::Lenient => record.gas_used = G::one(),
        }
    }
    Ok(record)
}

/// Reads an entire trace, grouping records into blocks sorted by
/// `(block_number, index)`. Lines may arrive in any order.
pub fn parse_trace<G, R>(reader: R, mode: ParseMode) -> Result<Vec<BlockTrace<G>>, TraceError>
where
    G: GasScalar + serde::de::DeserializeOwned,
    R: BufRead,
{
    let mut blocks: BTreeMap<u64, Vec<TransactionRecord<G>>> = BTreeMap::new();
    let mut seen: HashSet<(u64, u64)> = HashSet::new();
    for (lineno, raw) in reader.lines().enumerate() {
        let raw = raw?;
        let line = lineno + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record = parse_line(&raw, line, mode)?;
        if !seen.insert((record.block_number, record.index)) {
            return Err(TraceError::DuplicateIndex {
                line,
                block: record.block_number,
                index: record.index,
            });
        }
        blocks.entry(record.block_number).or_default().push(record);
    }
    Ok(blocks
        .into_iter()
        .map(|(number, txs)| BlockTrace::new(number, txs))
        .collect())
}

/// Writes blocks in the canonical line format. `parse_trace` of the output
/// reproduces the input exactly.
pub fn write_trace<G, W>(blocks: &[BlockTrace<G>], mut writer: W) -> io::Result<()>
where
    G: GasScalar + Serialize,
    W: Write,
{
    for block in blocks {
        for tx in &block.transactions {
            serde_json::to_writer(&mut writer, tx)?;
            writer.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Streaming block reader for traces whose blocks are line-contiguous
/// (the canonical writer emits them that way). Keeps one block in memory
/// at a time; a block number reappearing after a different block is an
/// error, since its earlier part has already been handed out.
pub struct BlockReader<G: GasScalar, R> {
    lines: io::Lines<R>,
    mode: ParseMode,
    lineno: usize,
    pending: Option<TransactionRecord<G>>,
    finished_blocks: HashSet<u64>,
    failed: bool,
}

impl<G: GasScalar, R: BufRead> BlockReader<G, R> {
    pub fn new(reader: R, mode: ParseMode) -> Self {
        BlockReader {
            lines: reader.lines(),
            mode,
            lineno: 0,
            pending: None,
            finished_blocks: HashSet::new(),
            failed: false,
        }
    }
}

impl<G, R> BlockReader<G, R>
where
    G: GasScalar + serde::de::DeserializeOwned,
    R: BufRead,
{
    fn next_record(&mut self) -> Result<Option<TransactionRecord<G>>, TraceError> {
        loop {
            let Some(raw) = self.lines.next().transpose()? else {
                return Ok(None);
            };
            self.lineno += 1;
            if raw.trim().is_empty() {
                continue;
            }
            return parse_line(&raw, self.lineno, self.mode).map(Some);
        }
    }

    fn next_block(&mut self) -> Result<Option<BlockTrace<G>>, TraceError> {
        let first = match self.pending.take() {
            Some(record) => record,
            None => match self.next_record()? {
                Some(record) => record,
                None => return Ok(None),
            },
        };
        let number = first.block_number;
        if !self.finished_blocks.insert(number) {
            return Err(TraceError::NonContiguousBlock {
                line: self.lineno,
                block: number,
            });
        }
        let mut txs = vec![first];
        let mut indices: HashSet<u64> = txs.iter().map(|tx| tx.index).collect();
        while let Some(record) = self.next_record()? {
            if record.block_number != number {
                self.pending = Some(record);
                break;
            }
            if !indices.insert(record.index) {
                return Err(TraceError::DuplicateIndex {
                    line: self.lineno,
                    block: number,
                    index: record.index,
                });
            }
            txs.push(record);
        }
        Ok(Some(BlockTrace::new(number, txs)))
    }
}

impl<G, R> Iterator for BlockReader<G, R>
where
    G: GasScalar + serde::de::DeserializeOwned,
    R: BufRead,
{
    type Item = Result<BlockTrace<G>, TraceError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        match self.next_block() {
            Ok(Some(block)) => Some(Ok(block)),
            Ok(None) => None,
            Err(err) => {
                self.failed = true;
                Some(Err(err))
            }
        }
    }
}

/// A broken invariant in a block. Violations are data, not errors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptyAccessList { index: u64 },
    ZeroGas { index: u64 },
    DuplicateIndex { index: u64 },
    OutOfOrderIndex { index: u64 },
    WrongBlockNumber { index: u64, expected: u64, got: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyAccessList { index } => {
                write!(f, "tx index {index}: empty access list")
            }
            Violation::ZeroGas { index } => write!(f, "tx index {index}: gasUsed is 0"),
            Violation::DuplicateIndex { index } => write!(f, "tx index {index}: duplicate index"),
            Violation::OutOfOrderIndex { index } => {
                write!(f, "tx index {index}: indices not ascending")
            }
            Violation::WrongBlockNumber {
                index,
                expected,
                got,
            } => write!(
                f,
                "tx index {index}: block number {got} does not match block {expected}"
            ),
        }
    }
}

/// Checks every type invariant of a block; empty result means valid.
pub fn validate_block<G: GasScalar>(block: &BlockTrace<G>) -> Vec<Violation> {
    let mut violations = Vec::new();
    let mut prev_index: Option<u64> = None;
    for tx in &block.transactions {
        if tx.accounts.is_empty() {
            violations.push(Violation::EmptyAccessList { index: tx.index });
        }
        if tx.gas_used.is_zero() {
            violations.push(Violation::ZeroGas { index: tx.index });
        }
        if tx.block_number != block.block_number {
            violations.push(Violation::WrongBlockNumber {
                index: tx.index,
                expected: block.block_number,
                got: tx.block_number,
            });
        }
        match prev_index {
            Some(prev) if tx.index == prev => {
                violations.push(Violation::DuplicateIndex { index: tx.index })
            }
            Some(prev) if tx.index < prev => {
                violations.push(Violation::OutOfOrderIndex { index: tx.index })
            }
            _ => {}
        }
        prev_index = Some(tx.index);
    }
    violations
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acct(b: u8) -> Account {
        let mut bytes = [0u8; 20];
        bytes[19] = b;
        Account::new(bytes)
    }

    fn tx(block: u64, index: u64, gas: Gas, accounts: &[Account]) -> TransactionRecord {
        TransactionRecord::new(
            TxHash::new([index as u8; 32]),
            block,
            index,
            gas,
            accounts.iter().copied(),
        )
    }

    #[test]
    fn empty_stream_parses_to_empty_list() {
        let blocks: Vec<BlockTrace> = parse_trace(&b""[..], ParseMode::Strict).unwrap();
        assert!(blocks.is_empty());
    }

    #[test]
    fn single_line_roundtrip() {
        let line = concat!(
            r#"{"hash":"0x"#,
            "00000000000000000000000000000000000000000000000000000000000000aa",
            r#"","block":1,"index":0,"gasUsed":21000,"accounts":["0x00000000000000000000000000000000000000aa"]}"#,
        );
        let blocks: Vec<BlockTrace> =
            parse_trace(format!("{line}\n").as_bytes(), ParseMode::Strict).unwrap();
        assert_eq!(blocks.len(), 1);
        assert_eq!(blocks[0].block_number, 1);
        assert_eq!(blocks[0].transactions.len(), 1);
        assert_eq!(blocks[0].transactions[0].gas_used, 21000);

        // Canonical key order on write: byte-identical line.
        let mut out = Vec::new();
        write_trace(&blocks, &mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), format!("{line}\n"));
    }

    #[test]
    fn out_of_order_indices_are_sorted() {
        let mut raw = Vec::new();
        let records = vec![
            tx(7, 2, 30, &[acct(3)]),
            tx(7, 0, 10, &[acct(1)]),
            tx(7, 1, 20, &[acct(2)]),
        ];
        for r in &records {
            serde_json::to_writer(&mut raw, r).unwrap();
            raw.push(b'\n');
        }
        let blocks: Vec<BlockTrace> = parse_trace(&raw[..], ParseMode::Strict).unwrap();
        assert_eq!(blocks.len(), 1);

        // Reference sort as the oracle.
        let mut expected = records.clone();
        expected.sort_by_key(|r| r.index);
        assert_eq!(blocks[0].transactions, expected);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let raw = b"{\"hash\":\"0xzz\"}\n";
        let err = parse_trace::<Gas, _>(&raw[..], ParseMode::Strict).unwrap_err();
        match err {
            TraceError::Malformed { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn invalid_hex_length_is_rejected() {
        let raw = br#"{"hash":"0xaa","block":1,"index":0,"gasUsed":21000,"accounts":["0xaa"]}"#;
        let err = parse_trace::<Gas, _>(&raw[..], ParseMode::Strict).unwrap_err();
        assert!(matches!(err, TraceError::Malformed { line: 1, .. }));
    }

    #[test]
    fn addresses_normalize_to_lowercase() {
        let raw = br#"{"hash":"0x00000000000000000000000000000000000000000000000000000000000000AA","block":1,"index":0,"gasUsed":1,"accounts":["0x00000000000000000000000000000000000000AB"]}"#;
        let blocks: Vec<BlockTrace> = parse_trace(&raw[..], ParseMode::Strict).unwrap();
        let account = blocks[0].transactions[0].accounts.iter().next().unwrap();
        assert_eq!(
            account.to_string(),
            "0x00000000000000000000000000000000000000ab"
        );
    }

    #[test]
    fn duplicate_block_index_is_an_error() {
        let mut raw = Vec::new();
        write_trace(
            &[BlockTrace {
                block_number: 3,
                transactions: vec![tx(3, 5, 10, &[acct(1)]), tx(3, 5, 20, &[acct(2)])],
            }],
            &mut raw,
        )
        .unwrap();
        let err = parse_trace::<Gas, _>(&raw[..], ParseMode::Strict).unwrap_err();
        assert!(matches!(
            err,
            TraceError::DuplicateIndex {
                block: 3,
                index: 5,
                ..
            }
        ));
    }

    #[test]
    fn zero_gas_strict_vs_lenient() {
        let raw = br#"{"hash":"0x0000000000000000000000000000000000000000000000000000000000000001","block":1,"index":0,"gasUsed":0,"accounts":["0x0000000000000000000000000000000000000001"]}"#;
        let err = parse_trace::<Gas, _>(&raw[..], ParseMode::Strict).unwrap_err();
        assert!(matches!(err, TraceError::ZeroGas { line: 1 }));

        let blocks: Vec<BlockTrace> = parse_trace(&raw[..], ParseMode::Lenient).unwrap();
        assert_eq!(blocks[0].transactions[0].gas_used, 1);
    }

    #[test]
    fn unknown_keys_ignored() {
        let raw = br#"{"hash":"0x0000000000000000000000000000000000000000000000000000000000000001","block":1,"index":0,"gasUsed":5,"accounts":["0x0000000000000000000000000000000000000001"],"extra":true}"#;
        let blocks: Vec<BlockTrace> = parse_trace(&raw[..], ParseMode::Strict).unwrap();
        assert_eq!(blocks[0].transactions[0].gas_used, 5);
    }

    #[test]
    fn duplicate_accounts_deduplicate() {
        let raw = br#"{"hash":"0x0000000000000000000000000000000000000000000000000000000000000001","block":1,"index":0,"gasUsed":5,"accounts":["0x0000000000000000000000000000000000000001","0x0000000000000000000000000000000000000001"]}"#;
        let blocks: Vec<BlockTrace> = parse_trace(&raw[..], ParseMode::Strict).unwrap();
        assert_eq!(blocks[0].transactions[0].accounts.len(), 1);
    }

    #[test]
    fn validate_block_flags_violations() {
        let good = BlockTrace::new(9, vec![tx(9, 0, 10, &[acct(1)]), tx(9, 1, 10, &[acct(2)])]);
        assert!(validate_block(&good).is_empty());

        let empty_accounts = BlockTrace::new(9, vec![tx(9, 0, 10, &[])]);
        assert_eq!(
            validate_block(&empty_accounts),
            vec![Violation::EmptyAccessList { index: 0 }]
        );

        let dup = BlockTrace {
            block_number: 9,
            transactions: vec![tx(9, 2, 10, &[acct(1)]), tx(9, 2, 20, &[acct(2)])],
        };
        assert_eq!(
            validate_block(&dup),
            vec![Violation::DuplicateIndex { index: 2 }]
        );
    }

    #[test]
    fn block_reader_streams_contiguous_blocks() {
        let mut raw = Vec::new();
        let blocks = vec![
            BlockTrace::new(1, vec![tx(1, 0, 10, &[acct(1)]), tx(1, 1, 20, &[acct(2)])]),
            BlockTrace::new(2, vec![tx(2, 0, 30, &[acct(3)])]),
        ];
        write_trace(&blocks, &mut raw).unwrap();
        let read: Vec<BlockTrace> = BlockReader::new(&raw[..], ParseMode::Strict)
            .collect::<Result<_, _>>()
            .unwrap();
        assert_eq!(read, blocks);
    }

    #[test]
    fn block_reader_rejects_interleaved_blocks() {
        let mut raw = Vec::new();
        for r in [tx(1, 0, 10, &[acct(1)]), tx(2, 0, 10, &[acct(1)]), tx(1, 1, 10, &[acct(1)])] {
            serde_json::to_writer(&mut raw, &r).unwrap();
            raw.push(b'\n');
        }
        let result: Result<Vec<BlockTrace>, _> =
            BlockReader::new(&raw[..], ParseMode::Strict).collect();
        assert!(matches!(
            result,
            Err(TraceError::NonContiguousBlock { block: 1, .. })
        ));
    }

    mod props {
        use super::*;
        use proptest::collection::vec;
        use proptest::prelude::*;

        prop_compose! {
            fn arb_record(block: u64, index: u64)(
                gas in 1u64..1_000_000,
                hash in any::<[u8; 32]>(),
                accounts in vec(any::<u8>(), 1..6),
            ) -> TransactionRecord {
                TransactionRecord::new(
                    TxHash::new(hash),
                    block,
                    index,
                    gas,
                    accounts.into_iter().map(acct),
                )
            }
        }

        fn arb_trace() -> impl Strategy<Value = Vec<BlockTrace>> {
            vec((0u64..50, vec(0u64..20, 1..8)), 0..6).prop_flat_map(|blocks| {
                let mut seen = HashSet::new();
                let mut strategies = Vec::new();
                for (number, indices) in blocks {
                    if !seen.insert(number) {
                        continue;
                    }
                    let mut idx: Vec<u64> = indices;
                    idx.sort_unstable();
                    idx.dedup();
                    let records: Vec<_> = idx
                        .into_iter()
                        .map(|i| arb_record(number, i))
                        .collect();
                    strategies.push((Just(number), records));
                }
                strategies
                    .into_iter()
                    .map(|(number, records)| {
                        (number, records).prop_map(|(n, rs)| BlockTrace::new(n, rs))
                    })
                    .collect::<Vec<_>>()
                    .prop_map(|mut blocks: Vec<BlockTrace>| {
                        blocks.sort_by_key(|b| b.block_number);
                        blocks
                    })
            })
        }

        proptest! {
            #[test]
            fn roundtrip(blocks in arb_trace()) {
                let mut bytes = Vec::new();
                write_trace(&blocks, &mut bytes).unwrap();
                let parsed: Vec<BlockTrace> = parse_trace(&bytes[..], ParseMode::Strict).unwrap();
                prop_assert_eq!(parsed, blocks);
            }

            #[test]
            fn parse_is_idempotent_and_order_insensitive(blocks in arb_trace()) {
                let mut bytes = Vec::new();
                write_trace(&blocks, &mut bytes).unwrap();

                // Reverse the line order; parsing must not care.
                let mut lines: Vec<&[u8]> = bytes.split(|&b| b == b'\n').filter(|l| !l.is_empty()).collect();
                lines.reverse();
                let mut shuffled = Vec::new();
                for line in lines {
                    shuffled.extend_from_slice(line);
                    shuffled.push(b'\n');
                }

                let parsed: Vec<BlockTrace> = parse_trace(&shuffled[..], ParseMode::Strict).unwrap();
                let mut rewritten = Vec::new();
                write_trace(&parsed, &mut rewritten).unwrap();
                prop_assert_eq!(&rewritten, &bytes);
                let reparsed: Vec<BlockTrace> = parse_trace(&rewritten[..], ParseMode::Strict).unwrap();
                prop_assert_eq!(reparsed, parsed);
            }
        }
    }
}
