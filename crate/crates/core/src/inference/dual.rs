/// Step-size adaptation by dual averaging (Hoffman & Gelman's constants).
#[derive(Clone, Debug, PartialEq)]
pub struct DualAveraging {
    pub mu: f64,
    pub target: f64,
    pub log_eps: f64,
    pub log_eps_bar: f64,
    pub h_bar: f64,
    pub t: u64,
}

pub const DA_GAMMA: f64 = 0.05;
pub const DA_T0: f64 = 10.0;
pub const DA_KAPPA: f64 = 0.75;

impl DualAveraging {
    pub fn new(eps0: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps0).ln(),
            target,
            log_eps: eps0.ln(),
            log_eps_bar: 0.0,
            h_bar: 0.0,
            t: 0,
        }
    }

    /// Step size to use during adaptation.
    pub fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    /// Step size once adaptation stops.
    pub fn averaged(&self) -> f64 {
        if self.t == 0 {
            self.current()
        } else {
            self.log_eps_bar.exp()
        }
    }

    pub fn update(&mut self, accept_prob: f64) {
        self.t += 1;
        let t = self.t as f64;
        let eta = 1.0 / (t + DA_T0);
        self.h_bar = (1.0 - eta) * self.h_bar + eta * (self.target - accept_prob);
        self.log_eps = self.mu - t.sqrt() / DA_GAMMA * self.h_bar;
        let w = t.powf(-DA_KAPPA);
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_acceptance_shrinks_step() {
        let mut da = DualAveraging::new(0.1, 0.75);
        for _ in 0..50 {
            da.update(0.1);
        }
        assert!(da.averaged() < 0.1);
        let mut da = DualAveraging::new(0.1, 0.75);
        for _ in 0..50 {
            da.update(1.0);
        }
        assert!(da.averaged() > 0.1);
    }

    // acceptance model a(eps) = exp(-eps): fixed point eps* = -ln(0.75)
    #[test]
    fn converges_on_a_smooth_acceptance_curve() {
        let mut da = DualAveraging::new(1.0, 0.75);
        for _ in 0..5000 {
            let a = (-da.current()).exp();
            da.update(a);
        }
        let want = -(0.75f64).ln();
        assert!((da.averaged() - want).abs() < 0.01 * want, "{}", da.averaged());
    }
}
