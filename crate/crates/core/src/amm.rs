//! Constant-product pool simulator.
//!
//! Reserves are `rust_decimal::Decimal` (28 significant digits) so spend
//! accounting stays exact. The fee is taken from the input amount before the
//! curve and left in the reserves.

use rust_decimal::prelude::*;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AmmError {
    #[error("pool reserves must be strictly positive (base {base}, quote {quote})")]
    InvalidPool { base: Decimal, quote: Decimal },
    #[error("fee of {0} bps is out of range")]
    InvalidFee(u32),
    #[error("swap amount must be non-negative, got {0}")]
    NegativeAmount(Decimal),
    #[error("swap would drain the pool")]
    WouldDrain,
    #[error("target price {0} is not reachable")]
    UnreachablePrice(Decimal),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SwapSide {
    /// Pay base (SOL), receive quote tokens.
    BuyQuote,
    /// Pay quote tokens, receive base (SOL).
    SellQuote,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pool {
    pub reserve_base: Decimal,
    pub reserve_quote: Decimal,
    pub fee_bps: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapResult {
    pub side: SwapSide,
    pub amount_in: Decimal,
    pub amount_out: Decimal,
    /// Base per quote.
    pub execution_price: Decimal,
    pub new_pool: Pool,
}

const BPS: Decimal = Decimal::from_parts(10_000, 0, 0, false, 0);

impl Pool {
    pub fn new(reserve_base: Decimal, reserve_quote: Decimal, fee_bps: u32) -> Result<Self, AmmError> {
        let pool = Pool { reserve_base, reserve_quote, fee_bps };
        pool.validate()?;
        Ok(pool)
    }

    pub fn validate(&self) -> Result<(), AmmError> {
        if self.reserve_base <= Decimal::ZERO || self.reserve_quote <= Decimal::ZERO {
            return Err(AmmError::InvalidPool { base: self.reserve_base, quote: self.reserve_quote });
        }
        if self.fee_bps >= 10_000 {
            return Err(AmmError::InvalidFee(self.fee_bps));
        }
        Ok(())
    }

    pub fn invariant_k(&self) -> Decimal {
        self.reserve_base * self.reserve_quote
    }

    /// Base per quote.
    pub fn spot_price(&self) -> Result<Decimal, AmmError> {
        self.validate()?;
        Ok(self.reserve_base / self.reserve_quote)
    }

    pub fn spot_price_usd(&self, sol_usd: Decimal) -> Result<Decimal, AmmError> {
        Ok(self.spot_price()? * sol_usd)
    }

    /// Both-sides convention: twice the base-side value.
    pub fn liquidity_usd(&self, sol_usd: Decimal) -> Decimal {
        Decimal::TWO * self.reserve_base * sol_usd
    }

    fn fee_multiplier(&self) -> Decimal {
        (BPS - Decimal::from(self.fee_bps)) / BPS
    }

    pub fn execute_swap(&self, side: SwapSide, amount_in: Decimal) -> Result<SwapResult, AmmError> {
        self.validate()?;
        if amount_in < Decimal::ZERO {
            return Err(AmmError::NegativeAmount(amount_in));
        }
        let spot = self.reserve_base / self.reserve_quote;
        if amount_in.is_zero() {
            return Ok(SwapResult {
                side,
                amount_in,
                amount_out: Decimal::ZERO,
                execution_price: spot,
                new_pool: self.clone(),
            });
        }

        let (reserve_in, reserve_out) = match side {
            SwapSide::BuyQuote => (self.reserve_base, self.reserve_quote),
            SwapSide::SellQuote => (self.reserve_quote, self.reserve_base),
        };
        let net_in = amount_in * self.fee_multiplier();
        // (in + net)(out - dy) = in * out  =>  dy = out * net / (in + net)
        let amount_out = reserve_out * net_in / (reserve_in + net_in);
        let new_in = reserve_in + amount_in;
        let new_out = reserve_out - amount_out;
        if amount_out <= Decimal::ZERO || new_out <= Decimal::ZERO {
            return Err(AmmError::WouldDrain);
        }

        let (new_pool, execution_price) = match side {
            SwapSide::BuyQuote => (
                Pool { reserve_base: new_in, reserve_quote: new_out, fee_bps: self.fee_bps },
                amount_in / amount_out,
            ),
            SwapSide::SellQuote => (
                Pool { reserve_base: new_out, reserve_quote: new_in, fee_bps: self.fee_bps },
                amount_out / amount_in,
            ),
        };
        Ok(SwapResult { side, amount_in, amount_out, execution_price, new_pool })
    }

    /// Finds the trade that moves the spot price (base per quote) to
    /// `target`, by bisection on the swap amount. Used to calibrate scenario
    /// timelines against quoted prices.
    pub fn trade_to_spot(&self, target: Decimal) -> Result<(SwapSide, Decimal), AmmError> {
        let spot = self.spot_price()?;
        if target <= Decimal::ZERO {
            return Err(AmmError::UnreachablePrice(target));
        }
        if target == spot {
            return Ok((SwapSide::BuyQuote, Decimal::ZERO));
        }
        let side = if target > spot { SwapSide::BuyQuote } else { SwapSide::SellQuote };
        let reaches = |amount: Decimal| -> Result<bool, AmmError> {
            let p = self.execute_swap(side, amount)?.new_pool.spot_price()?;
            Ok(match side {
                SwapSide::BuyQuote => p >= target,
                SwapSide::SellQuote => p <= target,
            })
        };
        let mut lo = Decimal::ZERO;
        let mut hi = match side {
            SwapSide::BuyQuote => self.reserve_base,
            SwapSide::SellQuote => self.reserve_quote,
        };
        let mut doublings = 0;
        while !reaches(hi)? {
            hi *= Decimal::TWO;
            doublings += 1;
            if doublings > 60 {
                return Err(AmmError::UnreachablePrice(target));
            }
        }
        for _ in 0..200 {
            let mid = (lo + hi) / Decimal::TWO;
            if mid == lo || mid == hi {
                break;
            }
            if reaches(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok((side, hi))
    }
}

/// Relative difference `|a - b| / |b|` as an `f64`, for tolerance checks.
pub fn relative_diff(a: Decimal, b: Decimal) -> f64 {
    if b.is_zero() {
        return (a - b).abs().to_f64().unwrap_or(f64::INFINITY);
    }
    ((a - b) / b).abs().to_f64().unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::str::FromStr;

    fn d(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    fn pool(x: &str, y: &str, fee: u32) -> Pool {
        Pool::new(d(x), d(y), fee).unwrap()
    }

    #[test]
    fn spot_price_is_reserve_ratio() {
        let p = pool("100", "1000000", 0);
        assert_eq!(p.spot_price().unwrap(), d("0.0001"));
        let doubled = pool("200", "2000000", 0);
        assert_eq!(doubled.spot_price().unwrap(), p.spot_price().unwrap());
        let seed = pool("37", "5000000", 25);
        assert_eq!(seed.spot_price().unwrap(), d("37") / d("5000000"));
    }

    #[test]
    fn invalid_pools_rejected() {
        assert!(matches!(Pool::new(d("0"), d("1"), 0), Err(AmmError::InvalidPool { .. })));
        assert!(matches!(Pool::new(d("1"), d("-1"), 0), Err(AmmError::InvalidPool { .. })));
        assert!(matches!(Pool::new(d("1"), d("1"), 10_000), Err(AmmError::InvalidFee(_))));
    }

    #[test]
    fn zero_swap_leaves_pool_unchanged() {
        let p = pool("100", "1000000", 25);
        let r = p.execute_swap(SwapSide::BuyQuote, Decimal::ZERO).unwrap();
        assert_eq!(r.amount_out, Decimal::ZERO);
        assert_eq!(r.new_pool, p);
    }

    #[test]
    fn negative_amount_rejected() {
        let p = pool("100", "1000000", 0);
        assert!(matches!(p.execute_swap(SwapSide::BuyQuote, d("-1")), Err(AmmError::NegativeAmount(_))));
    }

    /// Bisects on the invariant (x + dx)(y - dy) = xy for dy, in f64, as an
    /// oracle independent of the closed form.
    fn bisect_out(x: f64, y: f64, dx: f64) -> f64 {
        let k = x * y;
        let (mut lo, mut hi) = (0.0_f64, y);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if (x + dx) * (y - mid) > k {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn one_sol_buy_matches_bisection_oracle() {
        let p = pool("100", "1000000", 0);
        let r = p.execute_swap(SwapSide::BuyQuote, d("1")).unwrap();
        let oracle = bisect_out(100.0, 1_000_000.0, 1.0);
        let out = r.amount_out.to_f64().unwrap();
        assert!((out - oracle).abs() < 1e-6, "{out} vs {oracle}");
        assert!((out - 9_900.990099).abs() < 1e-6);
        assert!((r.execution_price.to_f64().unwrap() - 1.01e-4).abs() < 1e-12);
    }

    #[test]
    fn fee_stays_in_reserves() {
        let p = pool("100", "1000000", 25);
        let r = p.execute_swap(SwapSide::BuyQuote, d("1")).unwrap();
        assert_eq!(r.new_pool.reserve_base, d("101"));
        assert!(r.new_pool.invariant_k() > p.invariant_k());
        let fee_free = pool("100", "1000000", 0).execute_swap(SwapSide::BuyQuote, d("1")).unwrap();
        assert!(r.amount_out < fee_free.amount_out);
    }

    #[test]
    fn sell_moves_price_down() {
        let p = pool("100", "1000000", 0);
        let r = p.execute_swap(SwapSide::SellQuote, d("10000")).unwrap();
        let spot = p.spot_price().unwrap();
        assert!(r.execution_price < spot);
        assert!(r.new_pool.spot_price().unwrap() < spot);
        assert!(relative_diff(r.new_pool.invariant_k(), p.invariant_k()) < 1e-20);
    }

    #[test]
    fn forty_six_percent_drop_fixture() {
        let p = pool("37.5", "41000000", 25);
        let target = p.spot_price().unwrap() * d("0.5384");
        let (side, amount) = p.trade_to_spot(target).unwrap();
        assert_eq!(side, SwapSide::SellQuote);
        let after = p.execute_swap(side, amount).unwrap().new_pool;
        let drop = Decimal::ONE - after.spot_price().unwrap() / p.spot_price().unwrap();
        assert!((drop.to_f64().unwrap() - 0.4616).abs() < 1e-9);
    }

    #[test]
    fn trade_to_spot_reaches_targets_both_ways() {
        let p = pool("32.2", "47700000", 25);
        for factor in ["1.2", "0.8", "0.5", "2.5"] {
            let target = p.spot_price().unwrap() * d(factor);
            let (side, amt) = p.trade_to_spot(target).unwrap();
            let reached = p.execute_swap(side, amt).unwrap().new_pool.spot_price().unwrap();
            assert!(relative_diff(reached, target) < 1e-15, "{factor}");
        }
    }

    #[test]
    fn liquidity_convention() {
        let p = pool("1", "10", 0);
        assert_eq!(p.liquidity_usd(d("100")), d("200"));
    }

    proptest::proptest! {
        #[test]
        fn buy_execution_price_monotone(a in 1u64..10_000, b in 1u64..10_000) {
            let p = pool("100", "1000000", 25);
            let (small, large) = (a.min(b), a.max(b));
            let s = p.execute_swap(SwapSide::BuyQuote, Decimal::new(small as i64, 2)).unwrap();
            let l = p.execute_swap(SwapSide::BuyQuote, Decimal::new(large as i64, 2)).unwrap();
            proptest::prop_assert!(s.execution_price <= l.execution_price);
            proptest::prop_assert!(s.execution_price >= p.spot_price().unwrap());
        }

        #[test]
        fn output_is_concave_through_origin(a in 1u64..5_000) {
            // f(a) + f(a) > f(2a) with f(0) = 0 is strict concavity on the ray.
            let p = pool("50", "2000000", 0);
            let amt = Decimal::new(a as i64, 2);
            let one = p.execute_swap(SwapSide::BuyQuote, amt).unwrap().amount_out;
            let two = p.execute_swap(SwapSide::BuyQuote, amt * Decimal::TWO).unwrap().amount_out;
            proptest::prop_assert!(one > Decimal::ZERO);
            proptest::prop_assert!(one + one > two);
        }
    }
}
