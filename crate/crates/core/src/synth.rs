//! Seeded synthetic trace generator with controllable conflict structure.
//!
//! Contention comes from a Zipf-popular pool of hot contracts layered
//! over a large pool of users making mostly-disjoint transfers. Every
//! draw happens on a ChaCha stream derived from (seed, block, tx), so a
//! record's bytes depend only on the parameters and its position, never
//! on generation order; blocks can be produced in parallel and still
//! match sequential output byte for byte.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson, Zipf};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trace::{Account, BlockTrace, TransactionRecord, TxHash};
use crate::Gas;

/// Hard cap on extra touched accounts per transaction, so the geometric
/// tail (and the extra_touch_p = 1.0 edge case) stays bounded.
pub const MAX_EXTRA_TOUCHES: usize = 64;

/// Log-normal gas model, clipped to a block-era plausible range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GasModel {
    /// Mean of ln(gas).
    pub mu: f64,
    /// Standard deviation of ln(gas).
    pub sigma: f64,
    pub min: Gas,
    pub max: Gas,
}

impl Default for GasModel {
    fn default() -> Self {
        // exp(11.2) is roughly 73k gas, a typical contract call.
        GasModel {
            mu: 11.2,
            sigma: 0.6,
            min: 21_000,
            max: 8_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub blocks: u64,
    /// Poisson mean for transactions per block; draws clamp to >= 1.
    pub txs_per_block: f64,
    pub gas: GasModel,
    /// Hot contract pool size; popularity is Zipf-distributed.
    pub hot_contracts: u64,
    pub zipf_s: f64,
    /// User pool size; senders and transfer targets draw uniformly.
    pub users: u64,
    /// Chance to keep appending one more extra touched account.
    pub extra_touch_p: f64,
    /// Chance a transaction calls a hot contract instead of a user.
    pub p_contract_call: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            blocks: 100,
            txs_per_block: 48.0,
            gas: GasModel::default(),
            hot_contracts: 128,
            zipf_s: 1.0,
            users: 20_000,
            extra_touch_p: 0.25,
            p_contract_call: 0.4,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("{field} must be a probability in [0,1], got {value}")]
    BadProbability { field: &'static str, value: f64 },
    #[error("{field} must be >= 1, got {value}")]
    EmptyPool { field: &'static str, value: u64 },
    #[error("zipf_s must be finite and > 0, got {0}")]
    BadZipf(f64),
    #[error("txs_per_block must be finite and > 0, got {0}")]
    BadTxRate(f64),
    #[error("gas model invalid: mu/sigma must be finite, sigma >= 0, 1 <= min <= max")]
    BadGasModel,
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (field, value) in [
            ("extra_touch_p", self.extra_touch_p),
            ("p_contract_call", self.p_contract_call),
        ] {
            if !(0.0..=1.0).contains(&value) || value.is_nan() {
                return Err(SynthError::BadProbability { field, value });
            }
        }
        for (field, value) in [("hot_contracts", self.hot_contracts), ("users", self.users)] {
            if value < 1 {
                return Err(SynthError::EmptyPool { field, value });
            }
        }
        if !self.zipf_s.is_finite() || self.zipf_s <= 0.0 {
            return Err(SynthError::BadZipf(self.zipf_s));
        }
        if !self.txs_per_block.is_finite() || self.txs_per_block <= 0.0 {
            return Err(SynthError::BadTxRate(self.txs_per_block));
        }
        let g = &self.gas;
        if !g.mu.is_finite() || !g.sigma.is_finite() || g.sigma < 0.0 || g.min < 1 || g.min > g.max
        {
            return Err(SynthError::BadGasModel);
        }
        Ok(())
    }
}

/// Tag bytes keep the two pools disjoint; the pool index sits in the
/// address tail so traces stay readable.
fn user_address(index: u64) -> Account {
    let mut bytes = [0u8; 20];
    bytes[0] = 0x11;
    bytes[12..20].copy_from_slice(&index.to_be_bytes());
    Account::new(bytes)
}

fn contract_address(index: u64) -> Account {
    let mut bytes = [0u8; 20];
    bytes[0] = 0xcc;
    bytes[12..20].copy_from_slice(&index.to_be_bytes());
    Account::new(bytes)
}

/// Stream layout: high 32 bits select the block, low 32 bits the record
/// (0 = block-level draws, t+1 = transaction t).
fn stream_rng(seed: u64, block: u64, slot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((block & 0xffff_ffff) << 32 | (slot & 0xffff_ffff));
    rng
}

struct Pools {
    gas: LogNormal<f64>,
    zipf: Zipf<f64>,
}

impl Pools {
    fn new(params: &SynthParams) -> Self {
        Pools {
            gas: LogNormal::new(params.gas.mu, params.gas.sigma).expect("validated sigma"),
            zipf: Zipf::new(params.hot_contracts as f64, params.zipf_s).expect("validated zipf"),
        }
    }

    /// Zipf-popular contract with probability p_contract_call, else a
    /// uniform user.
    fn target(&self, params: &SynthParams, rng: &mut ChaCha8Rng) -> Account {
        if rng.random_bool(params.p_contract_call) {
            let popular = self.zipf.sample(rng) as u64;
            contract_address(popular.clamp(1, params.hot_contracts) - 1)
        } else {
            user_address(rng.random_range(0..params.users))
        }
    }
}

/// Generates one block; block numbers start at 1.
pub fn generate_block(params: &SynthParams, block_number: u64) -> BlockTrace {
    let pools = Pools::new(params);
    let mut block_rng = stream_rng(params.seed, block_number, 0);
    let poisson = Poisson::new(params.txs_per_block).expect("validated rate");
    let tx_count = (poisson.sample(&mut block_rng) as u64).max(1);

    let transactions = (0..tx_count)
        .map(|t| {
            let mut rng = stream_rng(params.seed, block_number, t + 1);
            // Fixed draw order: gas, sender, target, extras, hash.
            let raw = pools.gas.sample(&mut rng);
            let gas = (raw as Gas).clamp(params.gas.min, params.gas.max);
            let from = user_address(rng.random_range(0..params.users));
            let to = pools.target(params, &mut rng);
            let mut accounts = vec![from, to];
            while accounts.len() - 2 < MAX_EXTRA_TOUCHES
                && rng.random_bool(params.extra_touch_p)
            {
                accounts.push(pools.target(params, &mut rng));
            }
            let mut hash = [0u8; 32];
            rng.fill(&mut hash);
            TransactionRecord::new(TxHash::new(hash), block_number, t, gas, accounts)
        })
        .collect();
    BlockTrace::new(block_number, transactions)
}

pub fn generate(params: &SynthParams) -> Result<Vec<BlockTrace>, SynthError> {
    params.validate()?;
    Ok((1..=params.blocks)
        .map(|b| generate_block(params, b))
        .collect())
}
