//! Lazy realizations of the i.i.d. environment.
//!
//! Nothing is materialized: the law at a site is recomputed on demand from a
//! pseudorandom function of `(seed, coordinates)`, see [`crate::rng`].

use crate::lattice::LatticePoint;
use crate::model::{ModelSpec, StepLaw};
use crate::rng::{domain, hash_words, unit_f64};

/// Read access to one environment realization (or a modified view of one).
pub trait SiteLaws: Sync {
    fn model(&self) -> &ModelSpec;

    /// Mixture component governing site `x`.
    fn component_at(&self, x: &LatticePoint) -> usize;

    fn site_law(&self, x: &LatticePoint) -> &StepLaw {
        self.model().component_law(self.component_at(x))
    }
}

/// Component drawn by the site PRF keyed on `seed`.
#[inline]
pub fn draw_component(model: &ModelSpec, seed: u64, dom: u64, x: &LatticePoint) -> usize {
    if model.components().len() == 1 {
        return 0;
    }
    let bits = hash_words(seed, dom, x.coords().iter().map(|&c| c as u64));
    model.pick_component(unit_f64(bits))
}

/// One realization of the environment: a model plus a seed.
#[derive(Clone, Copy, Debug)]
pub struct Environment<'m> {
    model: &'m ModelSpec,
    seed: u64,
}

impl<'m> Environment<'m> {
    pub fn new(model: &'m ModelSpec, seed: u64) -> Self {
        Environment { model, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl SiteLaws for Environment<'_> {
    fn model(&self) -> &ModelSpec {
        self.model
    }

    #[inline]
    fn component_at(&self, x: &LatticePoint) -> usize {
        draw_component(self.model, self.seed, domain::SITE, x)
    }
}

/// Law at `site` of `env` without the trait import.
pub fn site_law<'e, E: SiteLaws + ?Sized>(env: &'e E, x: &LatticePoint) -> &'e StepLaw {
    env.site_law(x)
}

/// `env` with the law at a single site redrawn from the mixture.
#[derive(Clone, Debug)]
pub struct PerturbedEnvironment<'a, E: ?Sized> {
    base: &'a E,
    site: LatticePoint,
    component: usize,
}

impl<'a, E: SiteLaws + ?Sized> PerturbedEnvironment<'a, E> {
    pub fn site(&self) -> &LatticePoint {
        &self.site
    }

    /// Component now governing the perturbed site.
    pub fn component(&self) -> usize {
        self.component
    }

    pub fn base(&self) -> &'a E {
        self.base
    }
}

impl<E: SiteLaws + ?Sized> SiteLaws for PerturbedEnvironment<'_, E> {
    fn model(&self) -> &ModelSpec {
        self.base.model()
    }

    #[inline]
    fn component_at(&self, x: &LatticePoint) -> usize {
        if *x == self.site {
            self.component
        } else {
            self.base.component_at(x)
        }
    }
}

/// The view `omega~` that agrees with `env` off `z` and whose law at `z` is a
/// fresh mixture draw keyed on `resample_seed`.
pub fn perturb_site<'a, E: SiteLaws + ?Sized>(
    env: &'a E,
    z: &LatticePoint,
    resample_seed: u64,
) -> PerturbedEnvironment<'a, E> {
    let component = draw_component(env.model(), resample_seed, domain::PERTURB, z);
    PerturbedEnvironment {
        base: env,
        site: z.clone(),
        component,
    }
}

/// `env` with every site strictly above `threshold_level` redrawn from an
/// independent seed: a fresh sample of `omega_U` for the half-space
/// `U = {x : x . u_hat > threshold_level}`.
#[derive(Clone, Debug)]
pub struct HalfSpaceResampled<'a, E: ?Sized> {
    base: &'a E,
    threshold_level: i64,
    seed: u64,
}

impl<'a, E: SiteLaws + ?Sized> HalfSpaceResampled<'a, E> {
    pub fn new(base: &'a E, threshold_level: i64, seed: u64) -> Self {
        HalfSpaceResampled {
            base,
            threshold_level,
            seed,
        }
    }
}

impl<E: SiteLaws + ?Sized> SiteLaws for HalfSpaceResampled<'_, E> {
    fn model(&self) -> &ModelSpec {
        self.base.model()
    }

    #[inline]
    fn component_at(&self, x: &LatticePoint) -> usize {
        if self.base.model().level(x) > self.threshold_level {
            draw_component(self.base.model(), self.seed, domain::HALF_SPACE, x)
        } else {
            self.base.component_at(x)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets::{desk_model, two_jump};

    fn probe_sites() -> impl Iterator<Item = LatticePoint> {
        (0..100).flat_map(|i| (-50..50).map(move |j| LatticePoint::from([i, j])))
    }

    #[test]
    fn site_law_is_pure() {
        let m = desk_model();
        let env = Environment::new(&m, 17);
        for x in probe_sites().take(500) {
            assert_eq!(env.site_law(&x), env.site_law(&x));
        }
    }

    #[test]
    fn single_component_is_constant() {
        let m = two_jump([1, 0], [0, 1], [1, 1]);
        let env = Environment::new(&m, 3);
        for x in probe_sites().take(200) {
            assert_eq!(env.site_law(&x), m.component_law(0));
        }
    }

    #[test]
    fn component_frequencies_match_weights() {
        // Binomial(1e5, 1/2): SE of the frequency is 0.5/sqrt(1e5).
        let m = desk_model();
        let env = Environment::new(&m, 2024);
        let n = 100_000usize;
        let hits = (0..n as i64)
            .filter(|&i| env.component_at(&LatticePoint::from([i / 317, i % 317])) == 0)
            .count();
        let freq = hits as f64 / n as f64;
        let se = (0.25 / n as f64).sqrt();
        assert!((freq - 0.5).abs() <= 3.0 * se, "freq {freq}");
    }

    #[test]
    fn reload_reproduces_site_laws() {
        let m = desk_model();
        let seed = 0xDEAD_BEEF;
        let text = m.to_json_string();
        let reloaded = ModelSpec::from_json_str(&text).unwrap();
        let a = Environment::new(&m, seed);
        let b = Environment::new(&reloaded, seed);
        for x in probe_sites() {
            assert_eq!(a.site_law(&x), b.site_law(&x));
        }
    }

    #[test]
    fn perturbation_only_touches_one_site() {
        let m = desk_model();
        let env = Environment::new(&m, 5);
        let z = LatticePoint::from([3, 1]);
        let pert = perturb_site(&env, &z, 99);
        for x in probe_sites() {
            if x != z {
                assert_eq!(pert.component_at(&x), env.component_at(&x));
            }
        }
        // replay
        assert_eq!(
            pert.component_at(&z),
            draw_component(&m, 99, domain::PERTURB, &z)
        );
        assert_eq!(perturb_site(&env, &z, 99).component_at(&z), pert.component_at(&z));
    }

    #[test]
    fn perturbation_of_degenerate_mixture_is_identity() {
        let m = two_jump([1, 0], [1, 1], [1, 0]);
        let env = Environment::new(&m, 5);
        let z = LatticePoint::from([2, 1]);
        let pert = perturb_site(&env, &z, 1234);
        assert_eq!(pert.site_law(&z), env.site_law(&z));
    }

    #[test]
    fn half_space_resampling_keeps_lower_levels() {
        let m = desk_model();
        let env = Environment::new(&m, 8);
        let view = HalfSpaceResampled::new(&env, 4, 77);
        let mut differs = 0;
        for x in probe_sites().take(3000) {
            if m.level(&x) <= 4 {
                assert_eq!(view.component_at(&x), env.component_at(&x));
            } else if view.component_at(&x) != env.component_at(&x) {
                differs += 1;
            }
        }
        assert!(differs > 0);
    }
}
