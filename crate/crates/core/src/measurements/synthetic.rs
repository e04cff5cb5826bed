//! Seeded generator for measurement campaigns shaped like a real range/pose
//! sweep: log-distance path loss, a per-carriage body loss, a per-angle pose
//! loss for the rotating user, and Gaussian (dB) fading.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{quantize_db, CarriagePair, Channel, Dataset, PoseAngle, RssiSample};

#[derive(Debug, Clone)]
pub struct CarriageProfile {
    pub carriage: CarriagePair,
    /// Extra attenuation from body shadowing, dB.
    pub body_loss_db: f64,
    /// Pose loss of user 1 at each of the eight angles, dB (index 0 is 0°).
    pub pose_loss_db: [f64; 8],
}

#[derive(Debug, Clone)]
pub struct SyntheticCampaign {
    pub profiles: Vec<CarriageProfile>,
    pub distances: Vec<f64>,
    pub samples_per_cell: usize,
    /// RSSI at 1 ft with no body or pose loss, dBm.
    pub rssi_at_1ft: f64,
    pub path_loss_exponent: f64,
    pub fading_sigma_db: f64,
    pub tx_power: i32,
    pub seed: u64,
}

impl SyntheticCampaign {
    /// A campaign over the given carriage pairs with body losses spaced
    /// `body_loss_step_db` apart, on a 1-ft grid from 1 to 30 ft.
    pub fn with_pairs(pairs: &[CarriagePair], body_loss_step_db: f64, seed: u64) -> Self {
        let profiles = pairs
            .iter()
            .enumerate()
            .map(|(i, &carriage)| CarriageProfile {
                carriage,
                body_loss_db: body_loss_step_db * i as f64,
                pose_loss_db: [0.0, 2.0, 6.0, 9.0, 12.0, 9.0, 6.0, 2.0],
            })
            .collect();
        Self {
            profiles,
            distances: (1..=30).map(f64::from).collect(),
            samples_per_cell: 8,
            rssi_at_1ft: -38.0,
            path_loss_exponent: 2.0,
            fading_sigma_db: 4.0,
            tx_power: 12,
            seed,
        }
    }

    pub fn generate(&self) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let fading = Normal::new(0.0, self.fading_sigma_db.max(0.0)).expect("finite sigma");
        let mut samples = Vec::new();
        for profile in &self.profiles {
            for &distance in &self.distances {
                let mean = self.rssi_at_1ft
                    - 10.0 * self.path_loss_exponent * distance.log10()
                    - profile.body_loss_db;
                for angle in PoseAngle::all() {
                    for _ in 0..self.samples_per_cell {
                        let x =
                            mean - profile.pose_loss_db[angle.index()] + fading.sample(&mut rng);
                        samples.push(RssiSample {
                            rssi: quantize_db(x),
                            tx_power: self.tx_power,
                            distance,
                            pose_user1: angle,
                            pose_user2: PoseAngle::ZERO,
                            carriage: profile.carriage,
                            channel: Channel::Unknown,
                            synthetic: false,
                        });
                    }
                }
            }
        }
        Dataset::new(samples, format!("synthetic campaign (seed {})", self.seed))
    }
}
