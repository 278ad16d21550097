use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{HawkesModel, Kernel};
use crate::error::{Error, Result};
use crate::event_data::{Event, EventSequence};

pub const DEFAULT_EVENT_CAP: usize = 1_000_000;

/// Ogata thinning on `[0, horizon]`.
pub fn simulate(model: &HawkesModel, horizon: f64, seed: u64) -> Result<EventSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_with(model, horizon, DEFAULT_EVENT_CAP, &mut rng, format!("sim-{seed}"))
}

pub fn simulate_with(
    model: &HawkesModel,
    horizon: f64,
    max_events: usize,
    rng: &mut impl Rng,
    id: impl Into<String>,
) -> Result<EventSequence> {
    model.validate()?;
    model.check_stable()?;
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Parameter(format!("horizon {horizon} must be positive")));
    }
    let k = Kernel::new(model);
    let n = model.num_accounts();
    let mut r = vec![0.0; n];
    let mut rates = vec![0.0; n];
    let mut t = 0.0;
    let mut events = Vec::new();
    loop {
        // the total intensity only decays until the next event, so its
        // current value bounds it
        let bound = k.total_rate(&r);
        let wait = Exp::new(bound)
            .map_err(|e| Error::Numeric { stage: format!("thinning bound {bound}: {e}") })?
            .sample(rng);
        t += wait;
        if t > horizon {
            break;
        }
        let f = (-k.beta * wait).exp();
        r.iter_mut().for_each(|x| *x *= f);
        for (i, slot) in rates.iter_mut().enumerate() {
            *slot = k.rate(i, &r);
        }
        let total: f64 = rates.iter().sum();
        let u: f64 = rng.random();
        if u * bound > total {
            continue;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut account = n - 1;
        for (i, &l) in rates.iter().enumerate() {
            if pick < l {
                account = i;
                break;
            }
            pick -= l;
        }
        events.push(Event { account, time: t });
        if events.len() > max_events {
            return Err(Error::Stability(format!(
                "simulation exceeded {max_events} events before t = {horizon}"
            )));
        }
        r[account] += 1.0;
    }
    Ok(EventSequence::new(id, events))
}
