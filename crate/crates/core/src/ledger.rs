//! Fixed-supply token accounting: balances, purpose-tagged stakes, per-
//! tournament reward pools and coin-age consensus power.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Address, AgentId, Timestamp, TokenAmount, Uuid};

pub type StakeId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StakePurpose {
    ConsensusBond,
    AgentSubmission(AgentId),
    PricePublish(Uuid),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StakeEntry {
    pub amount: TokenAmount,
    pub purpose: StakePurpose,
    pub staked_at: Timestamp,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub balance: TokenAmount,
    pub stakes: BTreeMap<StakeId, StakeEntry>,
}

impl Account {
    pub fn staked(&self) -> TokenAmount {
        self.stakes.values().map(|s| s.amount).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("insufficient funds: {address:?} has {available}, needs {needed}")]
    InsufficientFunds { address: Address, available: TokenAmount, needed: TokenAmount },
    #[error("stake amount must be positive")]
    ZeroStake,
    #[error("unknown stake entry {0}")]
    UnknownEntry(StakeId),
    #[error("pool {tournament} holds {available}, cannot pay {needed}")]
    PoolUnderflow { tournament: u64, available: TokenAmount, needed: TokenAmount },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("supply mismatch: balances {balances} + stakes {stakes} + pools {pools} + burned {burned} != {supply}")]
pub struct AuditError {
    pub balances: u128,
    pub stakes: u128,
    pub pools: u128,
    pub burned: u128,
    pub supply: u128,
}

/// Totals reported by [`Ledger::audit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AuditSummary {
    pub balances: u128,
    pub stakes: u128,
    pub pools: u128,
    pub burned: u128,
    pub supply: u128,
}

/// Coin-age parameters: age is counted in whole `period`s and capped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoinAge {
    pub period: u64,
    pub cap: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ledger {
    accounts: BTreeMap<Address, Account>,
    pools: BTreeMap<u64, TokenAmount>,
    burned: TokenAmount,
    supply: TokenAmount,
    next_stake_id: StakeId,
}

impl Ledger {
    /// Creates a ledger whose fixed supply is the sum of the genesis balances and bonds.
    pub fn genesis<I>(allocations: I) -> Self
    where
        I: IntoIterator<Item = (Address, TokenAmount, TokenAmount)>,
    {
        let mut ledger = Ledger::default();
        for (address, balance, bond) in allocations {
            let acct = ledger.accounts.entry(address).or_default();
            acct.balance += balance;
            ledger.supply += balance + bond;
            if bond > 0 {
                let id = ledger.next_stake_id;
                ledger.next_stake_id += 1;
                ledger
                    .accounts
                    .get_mut(&address)
                    .expect("inserted")
                    .stakes
                    .insert(id, StakeEntry { amount: bond, purpose: StakePurpose::ConsensusBond, staked_at: 0 });
            }
        }
        ledger
    }

    pub fn supply(&self) -> TokenAmount {
        self.supply
    }

    pub fn account(&self, who: &Address) -> Option<&Account> {
        self.accounts.get(who)
    }

    pub fn accounts(&self) -> impl Iterator<Item = (&Address, &Account)> {
        self.accounts.iter()
    }

    pub fn balance(&self, who: &Address) -> TokenAmount {
        self.accounts.get(who).map_or(0, |a| a.balance)
    }

    pub fn pool(&self, k: u64) -> TokenAmount {
        self.pools.get(&k).copied().unwrap_or(0)
    }

    pub fn burned(&self) -> TokenAmount {
        self.burned
    }

    pub fn stake_entry(&self, who: &Address, id: StakeId) -> Option<&StakeEntry> {
        self.accounts.get(who)?.stakes.get(&id)
    }

    fn debit(&mut self, who: &Address, amount: TokenAmount) -> Result<(), LedgerError> {
        let available = self.balance(who);
        if available < amount {
            return Err(LedgerError::InsufficientFunds { address: *who, available, needed: amount });
        }
        if amount > 0 {
            self.accounts.get_mut(who).expect("funded account exists").balance -= amount;
        }
        Ok(())
    }

    fn credit(&mut self, who: &Address, amount: TokenAmount) {
        if amount > 0 {
            self.accounts.entry(*who).or_default().balance += amount;
        }
    }

    pub fn transfer(&mut self, from: &Address, to: &Address, amount: TokenAmount) -> Result<(), LedgerError> {
        self.debit(from, amount)?;
        self.credit(to, amount);
        Ok(())
    }

    pub fn burn(&mut self, from: &Address, amount: TokenAmount) -> Result<(), LedgerError> {
        self.debit(from, amount)?;
        self.burned += amount;
        Ok(())
    }

    pub fn stake(
        &mut self,
        who: &Address,
        amount: TokenAmount,
        purpose: StakePurpose,
        now: Timestamp,
    ) -> Result<StakeId, LedgerError> {
        if amount == 0 {
            return Err(LedgerError::ZeroStake);
        }
        self.debit(who, amount)?;
        let id = self.next_stake_id;
        self.next_stake_id += 1;
        self.accounts
            .get_mut(who)
            .expect("debited account exists")
            .stakes
            .insert(id, StakeEntry { amount, purpose, staked_at: now });
        Ok(id)
    }

    fn take_stake(&mut self, who: &Address, id: StakeId) -> Result<StakeEntry, LedgerError> {
        self.accounts.get_mut(who).and_then(|a| a.stakes.remove(&id)).ok_or(LedgerError::UnknownEntry(id))
    }

    /// Returns a stake to its owner's balance.
    pub fn release_stake(&mut self, who: &Address, id: StakeId) -> Result<TokenAmount, LedgerError> {
        let entry = self.take_stake(who, id)?;
        self.credit(who, entry.amount);
        Ok(entry.amount)
    }

    /// Moves a stake into the reward pool of tournament `k`.
    pub fn consume_stake_into_pool(&mut self, who: &Address, id: StakeId, k: u64) -> Result<TokenAmount, LedgerError> {
        let entry = self.take_stake(who, id)?;
        *self.pools.entry(k).or_default() += entry.amount;
        Ok(entry.amount)
    }

    pub fn escrow_into_pool(&mut self, from: &Address, amount: TokenAmount, k: u64) -> Result<(), LedgerError> {
        self.debit(from, amount)?;
        *self.pools.entry(k).or_default() += amount;
        Ok(())
    }

    pub fn payout_from_pool(&mut self, k: u64, to: &Address, amount: TokenAmount) -> Result<(), LedgerError> {
        let available = self.pool(k);
        if available < amount {
            return Err(LedgerError::PoolUnderflow { tournament: k, available, needed: amount });
        }
        self.set_pool(k, available - amount);
        self.credit(to, amount);
        Ok(())
    }

    /// Moves `amount` from pool `from_k` into pool `to_k`.
    pub fn roll_over(&mut self, from_k: u64, to_k: u64, amount: TokenAmount) -> Result<(), LedgerError> {
        let available = self.pool(from_k);
        if available < amount {
            return Err(LedgerError::PoolUnderflow { tournament: from_k, available, needed: amount });
        }
        self.set_pool(from_k, available - amount);
        *self.pools.entry(to_k).or_default() += amount;
        Ok(())
    }

    fn set_pool(&mut self, k: u64, amount: TokenAmount) {
        if amount == 0 {
            self.pools.remove(&k);
        } else {
            self.pools.insert(k, amount);
        }
    }

    /// Consensus power: for every consensus bond, `amount * min(age, cap)`
    /// with age in whole periods since the bond was placed.
    pub fn consensus_power(&self, who: &Address, now: Timestamp, age: CoinAge) -> u128 {
        let Some(acct) = self.accounts.get(who) else { return 0 };
        acct.stakes
            .values()
            .filter(|s| s.purpose == StakePurpose::ConsensusBond)
            .map(|s| {
                let periods = now.saturating_sub(s.staked_at) / age.period;
                s.amount as u128 * periods.min(age.cap) as u128
            })
            .sum()
    }

    /// All addresses with nonzero consensus power at `now`, in address order.
    pub fn validators(&self, now: Timestamp, age: CoinAge) -> Vec<(Address, u128)> {
        self.accounts.keys().map(|a| (*a, self.consensus_power(a, now, age))).filter(|(_, p)| *p > 0).collect()
    }

    pub fn audit(&self) -> Result<AuditSummary, AuditError> {
        let balances: u128 = self.accounts.values().map(|a| a.balance as u128).sum();
        let stakes: u128 = self.accounts.values().map(|a| a.staked() as u128).sum();
        let pools: u128 = self.pools.values().map(|p| *p as u128).sum();
        let burned = self.burned as u128;
        let supply = self.supply as u128;
        if balances + stakes + pools + burned == supply {
            Ok(AuditSummary { balances, stakes, pools, burned, supply })
        } else {
            Err(AuditError { balances, stakes, pools, burned, supply })
        }
    }
}
