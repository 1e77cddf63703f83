use adpomdp_core::env::{Episode, World, BOOST};
use serde::{Deserialize, Serialize};

/// Raw totals accumulated over one or more episodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub episodes: usize,
    pub revenue: f64,
    pub cost: f64,
    pub reward: f64,
    pub discounted_reward: f64,
    pub clicks: u64,
    pub purchases: u64,
    pub displays: u64,
}

impl Totals {
    pub fn add_episode(&mut self, world: &World, ep: &Episode, gamma: f64) {
        let r = world.reward;
        let price = ep.item.price;
        let bid = ep.item.bid;
        self.episodes += 1;
        for s in &ep.trajectory.steps[1..] {
            let mult = if s.action == BOOST { r.beta_boost } else { 1.0 };
            self.revenue += r.lambda_scale * price * f64::from(s.purchase);
            self.cost += mult * bid * f64::from(s.click);
            self.clicks += u64::from(s.click);
            self.purchases += u64::from(s.purchase);
        }
        self.displays += ep.displayed.iter().filter(|d| **d).count() as u64;
        self.reward += ep.total_reward();
        self.discounted_reward += ep.discounted_reward(gamma);
    }

    /// Revenue over cost; NaN when nothing was paid.
    pub fn roi(&self) -> f64 {
        if self.cost > 0.0 {
            self.revenue / self.cost
        } else {
            f64::NAN
        }
    }

    pub fn mean_reward(&self) -> f64 {
        self.reward / self.episodes.max(1) as f64
    }
}

/// `100 * x / base`, so the reference row is exactly 100.
pub fn relative(x: f64, base: f64) -> f64 {
    if x == base {
        100.0
    } else {
        100.0 * x / base
    }
}
