//! Parametric hand silhouettes rendered as registered VIS/TH pairs.
//!
//! Geometry lives in "hand units" (the hand spans about 146 units from
//! fingertip to wrist) with `y` pointing down and the palm centered near
//! `(0, 20)`. Each user gets one perturbed copy of the template shape plus
//! an albedo field (visible texture) and a heat field (thermal pattern).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, GroundTruth, HarnessError, Sample};
use crate::image::{BinaryMask, GrayImage};
use crate::par::{self, Execution};
use crate::segmentation::{raster_center, SimilarityTransform};

/// Height of the template hand in hand units.
const HAND_SPAN: f64 = 146.0;
/// Vertical center of the template bounding box.
const HAND_MID_Y: f64 = 20.0;
/// Amplitude of the per-session heat pattern change, relative to the drift offset.
const DRIFT_PATTERN_GAIN: f64 = 2.0;
/// How strongly each finger follows a common fan-out motion.
const FAN_WEIGHT: [f64; 5] = [0.0, -1.0, -0.3, 0.3, 1.0];

/// Finger label values; 0 is "not a finger".
pub const LABEL_THUMB: u8 = 1;
pub const LABEL_INDEX: u8 = 2;
pub const LABEL_MIDDLE: u8 = 3;
pub const LABEL_RING: u8 = 4;
pub const LABEL_LITTLE: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorJitter {
    /// Max |rotation| of the VIS to TH mapping, radians.
    pub rotation: f64,
    /// Max |translation| per axis, pixels.
    pub translation: f64,
    /// Max |scale - 1|.
    pub scale: f64,
}

impl Default for SensorJitter {
    fn default() -> Self {
        Self {
            rotation: 0.035,
            translation: 3.0,
            scale: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseJitter {
    /// Max |in-plane rotation| of the hand, radians.
    pub rotation: f64,
    /// Max |translation| per axis, pixels.
    pub translation: f64,
    /// Std of the per-sample finger fan-out at the outer fingers, radians.
    pub finger_angle: f64,
}

impl Default for PoseJitter {
    fn default() -> Self {
        Self {
            rotation: 0.08,
            translation: 4.0,
            finger_angle: 0.04,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub sessions: usize,
    pub samples_per_session: usize,
    pub image_size: usize,
    /// Fraction of the image height spanned by the template hand.
    pub hand_scale: f64,
    pub cold_finger_prob: f64,
    pub sensor_jitter: SensorJitter,
    pub pose_jitter: PoseJitter,
    /// Relative std of per-user shape parameters.
    pub shape_spread: f64,
    /// Std of per-user finger angles, radians.
    pub finger_angle_spread: f64,
    pub texture_contrast: f64,
    pub heat_contrast: f64,
    /// Gaussian noise std on VIS pixels.
    pub vis_noise: f64,
    /// Half-width of the uniform noise on TH pixels.
    pub th_noise: f64,
    pub vis_background: f64,
    pub vis_hand: f64,
    pub th_background: f64,
    pub th_hand: f64,
    /// Minimum gap between the warmest background and the coolest warm hand pixel.
    pub th_margin: f64,
    /// Hand temperature drop per session; also scales a per-session change
    /// of the heat pattern (0 disables drift).
    pub session_drift: f64,
    pub rng_seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_users: 20,
            sessions: 5,
            samples_per_session: 2,
            image_size: 160,
            hand_scale: 0.8,
            cold_finger_prob: 0.0,
            sensor_jitter: SensorJitter::default(),
            pose_jitter: PoseJitter::default(),
            shape_spread: 0.03,
            finger_angle_spread: 0.02,
            texture_contrast: 0.12,
            heat_contrast: 0.08,
            vis_noise: 0.01,
            th_noise: 0.01,
            vis_background: 0.1,
            vis_hand: 0.6,
            th_background: 0.25,
            th_hand: 0.68,
            th_margin: 0.15,
            session_drift: 0.0,
            rng_seed: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: &str| Err(HarnessError::Config(msg.to_string()));
        if self.num_users < 2 {
            return bad("num_users must be at least 2");
        }
        if self.sessions == 0 || self.samples_per_session == 0 {
            return bad("sessions and samples_per_session must be positive");
        }
        if !(0.0..=1.0).contains(&self.cold_finger_prob) {
            return bad("cold_finger_prob must lie in [0, 1]");
        }
        if !(self.hand_scale > 0.0) {
            return bad("hand_scale must be positive");
        }
        let nonneg = [
            self.shape_spread,
            self.finger_angle_spread,
            self.texture_contrast,
            self.heat_contrast,
            self.vis_noise,
            self.th_noise,
            self.th_margin,
            self.sensor_jitter.rotation,
            self.sensor_jitter.translation,
            self.sensor_jitter.scale,
            self.pose_jitter.rotation,
            self.pose_jitter.translation,
            self.pose_jitter.finger_angle,
        ];
        if nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || !self.session_drift.is_finite() {
            return bad(
                "spreads, noise levels, contrasts and jitter must be finite and non-negative",
            );
        }
        if self.sensor_jitter.scale >= 0.5 {
            return bad("sensor scale jitter must be below 0.5");
        }
        let coolest = self.th_hand
            - self.heat_contrast
            - self.session_drift.abs() * (self.sessions - 1) as f64
            - self.th_noise;
        if coolest < self.th_background + self.th_noise + self.th_margin {
            return bad("thermal levels leave less than th_margin between hand and background");
        }
        if self.th_hand + self.heat_contrast + self.th_noise > 1.0
            || self.th_background - self.th_noise < 0.0
        {
            return bad("thermal levels must stay inside [0, 1]");
        }
        if self.image_size < 32 {
            return Err(HarnessError::ImageTooSmall(self.image_size));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

#[derive(Debug, Clone, Copy)]
struct Capsule {
    ax: f64,
    ay: f64,
    bx: f64,
    by: f64,
    r: f64,
}

impl Capsule {
    fn along(x: f64, y: f64, angle: f64, length: f64, r: f64) -> Self {
        // angle measured from straight up, positive leaning right
        Self {
            ax: x,
            ay: y,
            bx: x + length * angle.sin(),
            by: y - length * angle.cos(),
            r,
        }
    }

    fn sdf(&self, x: f64, y: f64) -> f64 {
        let (vx, vy) = (self.bx - self.ax, self.by - self.ay);
        let (wx, wy) = (x - self.ax, y - self.ay);
        let t = ((wx * vx + wy * vy) / (vx * vx + vy * vy)).clamp(0.0, 1.0);
        let (dx, dy) = (wx - t * vx, wy - t * vy);
        (dx * dx + dy * dy).sqrt() - self.r
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    x: f64,
    y: f64,
    inv_two_var: f64,
    amp: f64,
}

#[derive(Debug, Clone)]
struct FingerShape {
    base_x: f64,
    base_dy: f64,
    length: f64,
    angle: f64,
    radius: f64,
}

/// Per-user hand model.
#[derive(Debug, Clone)]
struct UserHand {
    palm_cy: f64,
    palm_a: f64,
    palm_b: f64,
    wrist_r: f64,
    /// thumb, index, middle, ring, little
    fingers: [FingerShape; 5],
    albedo: Vec<Blob>,
    heat: Vec<Blob>,
}

/// A user hand with its per-sample finger pose fixed.
struct PosedHand<'a> {
    user: &'a UserHand,
    fingers: [Capsule; 5],
    wrist: Capsule,
}

impl UserHand {
    fn draw(rng: &mut ChaCha8Rng, cfg: &SyntheticConfig) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let mut z = || -> f64 { Distribution::<f64>::sample(&normal, rng).clamp(-2.5, 2.5) };
        let spread = cfg.shape_spread;
        let mut rel = |v: f64| v * (1.0 + spread * z());
        let palm_a = rel(30.0);
        let palm_b = rel(34.0);
        let wrist_r = rel(22.0);
        let lengths = [rel(30.0), rel(38.0), rel(42.0), rel(39.0), rel(31.0)];
        let radii = [rel(5.5), rel(4.5), rel(4.5), rel(4.5), rel(4.0)];
        let base_x = [-25.0, -18.0, -6.0, 6.0, 18.0];
        let base_dy = [10.0, 0.0, 0.0, 0.0, 0.0];
        let angles = [-40f64, -10.0, -3.0, 3.0, 10.0];
        let mut za = || -> f64 { Distribution::<f64>::sample(&normal, rng).clamp(-2.5, 2.5) };
        let fingers = std::array::from_fn(|i| FingerShape {
            base_x: base_x[i],
            base_dy: base_dy[i],
            length: lengths[i],
            angle: angles[i].to_radians() + cfg.finger_angle_spread * za(),
            radius: radii[i],
        });
        let albedo = draw_blobs(rng, 8, cfg.texture_contrast);
        let heat = draw_blobs(rng, 5, cfg.heat_contrast);
        UserHand {
            palm_cy: 20.0,
            palm_a,
            palm_b,
            wrist_r,
            fingers,
            albedo,
            heat,
        }
    }

    fn palm_top(&self) -> f64 {
        self.palm_cy - self.palm_b
    }

    fn pose(&self, finger_jitter: [f64; 5]) -> PosedHand<'_> {
        let base_y = self.palm_top() + 6.0;
        let fingers = std::array::from_fn(|i| {
            let f = &self.fingers[i];
            Capsule::along(
                f.base_x,
                base_y + f.base_dy,
                f.angle + finger_jitter[i],
                f.length,
                f.radius,
            )
        });
        let wrist = Capsule {
            ax: 0.0,
            ay: self.palm_cy + 25.0,
            bx: 0.0,
            by: self.palm_cy + 50.0,
            r: self.wrist_r,
        };
        PosedHand {
            user: self,
            fingers,
            wrist,
        }
    }
}

impl PosedHand<'_> {
    fn palm_sdf(&self, x: f64, y: f64) -> f64 {
        let u = self.user;
        let (nx, ny) = (x / u.palm_a, (y - u.palm_cy) / u.palm_b);
        ((nx * nx + ny * ny).sqrt() - 1.0) * u.palm_a.min(u.palm_b)
    }

    fn sdf(&self, x: f64, y: f64) -> f64 {
        let mut d = self.palm_sdf(x, y).min(self.wrist.sdf(x, y));
        for f in &self.fingers {
            d = d.min(f.sdf(x, y));
        }
        d
    }

    /// Finger label (capsule minus palm and wrist).
    fn label(&self, x: f64, y: f64) -> u8 {
        if self.palm_sdf(x, y) <= 0.0 || self.wrist.sdf(x, y) <= 0.0 {
            return 0;
        }
        let mut best = (0u8, 0.0f64);
        for (i, f) in self.fingers.iter().enumerate() {
            let d = f.sdf(x, y);
            if d <= 0.0 && (best.0 == 0 || d < best.1) {
                best = (i as u8 + 1, d);
            }
        }
        best.0
    }
}

fn draw_blobs(rng: &mut ChaCha8Rng, n: usize, contrast: f64) -> Vec<Blob> {
    (0..n)
        .map(|_| {
            let sigma: f64 = rng.random_range(7.0..18.0);
            Blob {
                x: rng.random_range(-35.0..35.0),
                y: rng.random_range(-45.0..70.0),
                inv_two_var: 1.0 / (2.0 * sigma * sigma),
                amp: contrast * rng.random_range(-1.0..1.0),
            }
        })
        .collect()
}

fn field(blobs: &[Blob], x: f64, y: f64) -> f64 {
    blobs
        .iter()
        .map(|b| b.amp * (-((x - b.x).powi(2) + (y - b.y).powi(2)) * b.inv_two_var).exp())
        .sum()
}

/// Maps hand units to VIS pixels: `p = c + t + L R(rot) (h - (0, mid))`.
#[derive(Debug, Clone, Copy)]
struct Pose {
    center: (f64, f64),
    shift: (f64, f64),
    rotation: f64,
    units_to_px: f64,
}

impl Pose {
    fn to_hand(&self, px: f64, py: f64) -> (f64, f64) {
        let (s, c) = self.rotation.sin_cos();
        let dx = (px - self.center.0 - self.shift.0) / self.units_to_px;
        let dy = (py - self.center.1 - self.shift.1) / self.units_to_px;
        (c * dx + s * dy, -s * dx + c * dy + HAND_MID_Y)
    }
}

/// Generates the full dataset; identical configs give bit-identical output.
pub fn generate_dataset(cfg: &SyntheticConfig) -> Result<Dataset, HarnessError> {
    generate_dataset_with(Execution::default(), cfg)
}

pub fn generate_dataset_with(
    exec: Execution,
    cfg: &SyntheticConfig,
) -> Result<Dataset, HarnessError> {
    cfg.validate()?;
    let users: Vec<UserHand> = (0..cfg.num_users)
        .map(|u| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            rng.set_stream(u as u64);
            UserHand::draw(&mut rng, cfg)
        })
        .collect();
    let per_user = cfg.sessions * cfg.samples_per_session;
    let jobs: Vec<(usize, usize, usize)> = (0..cfg.num_users)
        .flat_map(|u| {
            (0..cfg.sessions)
                .flat_map(move |s| (0..cfg.samples_per_session).map(move |k| (u, s, k)))
        })
        .collect();
    let samples = par::try_map(exec, &jobs, |&(u, s, k)| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        rng.set_stream((1u64 << 40) | (u * per_user + s * cfg.samples_per_session + k) as u64);
        // the thermal pattern wanders further from session 1 as time passes
        let mut session_rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        session_rng.set_stream((2u64 << 40) | (u * cfg.sessions + s) as u64);
        let wander = draw_blobs(
            &mut session_rng,
            5,
            DRIFT_PATTERN_GAIN * cfg.session_drift * s as f64,
        );
        render_sample(
            cfg,
            &users[u],
            &wander,
            u as u32 + 1,
            s as u32 + 1,
            k as u32 + 1,
            &mut rng,
        )
    })?;
    Ok(Dataset::new(samples))
}

fn symmetric(rng: &mut ChaCha8Rng, max: f64) -> f64 {
    if max > 0.0 {
        rng.random_range(-max..=max)
    } else {
        0.0
    }
}

fn render_sample(
    cfg: &SyntheticConfig,
    user: &UserHand,
    wander: &[Blob],
    user_id: u32,
    session: u32,
    sample: u32,
    rng: &mut ChaCha8Rng,
) -> Result<Sample, HarnessError> {
    let n = cfg.image_size;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let pj = cfg.pose_jitter;
    let mut z = || -> f64 { Distribution::<f64>::sample(&normal, rng).clamp(-2.5, 2.5) };
    // fingers fan open or closed together; the thumb moves on its own
    let fan = z();
    let mut finger_jitter = [pj.finger_angle * z(), 0.0, 0.0, 0.0, 0.0];
    for (i, slot) in finger_jitter.iter_mut().enumerate().skip(1) {
        *slot = pj.finger_angle * (fan * FAN_WEIGHT[i] + 0.25 * z());
    }
    let hand = user.pose(finger_jitter);
    let pose = Pose {
        center: raster_center(n, n),
        shift: (
            symmetric(rng, pj.translation),
            symmetric(rng, pj.translation),
        ),
        rotation: symmetric(rng, pj.rotation),
        units_to_px: cfg.hand_scale * n as f64 / HAND_SPAN,
    };
    let sj = cfg.sensor_jitter;
    let transform = SimilarityTransform::new(
        symmetric(rng, sj.rotation),
        symmetric(rng, sj.translation),
        symmetric(rng, sj.translation),
        1.0 + symmetric(rng, sj.scale),
    )
    .map_err(|e| HarnessError::Config(e.to_string()))?;
    let cold: [bool; 5] = std::array::from_fn(|_| rng.random_bool(cfg.cold_finger_prob));
    let drift = cfg.session_drift * (session - 1) as f64;

    // visible frame: anti-aliased silhouette, albedo texture, gaussian noise
    let mut vis = Vec::with_capacity(n * n);
    let mut vis_mask = Vec::with_capacity(n * n);
    let mut labels = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (hx, hy) = pose.to_hand(x as f64, y as f64);
            let d = hand.sdf(hx, hy) * pose.units_to_px;
            let cover = (0.5 - d).clamp(0.0, 1.0);
            let hand_level = cfg.vis_hand + field(&user.albedo, hx, hy);
            let v = cfg.vis_background * (1.0 - cover)
                + hand_level * cover
                + cfg.vis_noise * normal.sample(rng);
            vis.push(v.clamp(0.0, 1.0));
            vis_mask.push(d <= 0.0);
            labels.push(if d <= 0.0 { hand.label(hx, hy) } else { 0 });
        }
    }

    // thermal frame: hard edges under the sensor transform, bounded noise
    let c = raster_center(n, n);
    let mut th = Vec::with_capacity(n * n);
    let mut th_mask = Vec::with_capacity(n * n);
    let mut th_labels = Vec::with_capacity(n * n);
    for y in 0..n {
        for x in 0..n {
            let (vx, vy) = transform.invert_point((x as f64, y as f64), c);
            let (hx, hy) = pose.to_hand(vx, vy);
            let inside = hand.sdf(hx, hy) <= 0.0;
            let label = if inside { hand.label(hx, hy) } else { 0 };
            let warm = inside && (label == 0 || !cold[label as usize - 1]);
            let base = if warm {
                let heat = (field(&user.heat, hx, hy) + field(wander, hx, hy))
                    .clamp(-cfg.heat_contrast, cfg.heat_contrast);
                cfg.th_hand + heat - drift
            } else {
                cfg.th_background
            };
            th.push(base + symmetric(rng, cfg.th_noise));
            th_mask.push(inside);
            th_labels.push(label);
        }
    }

    let vis_mask = BinaryMask::new(n, n, vis_mask)?;
    let th_mask = BinaryMask::new(n, n, th_mask)?;
    if touches_border(&vis_mask) || touches_border(&th_mask) {
        return Err(HarnessError::ImageTooSmall(n));
    }
    Ok(Sample {
        user_id,
        session,
        sample,
        vis: GrayImage::new(n, n, vis)?,
        th: GrayImage::new(n, n, th)?,
        transform: Some(transform),
        truth: Some(GroundTruth {
            vis_mask,
            th_mask,
            labels,
            th_labels,
            cold_fingers: cold,
        }),
    })
}

fn touches_border(mask: &BinaryMask) -> bool {
    let (w, h) = (mask.width(), mask.height());
    (0..w).any(|x| mask.get(x, 0) || mask.get(x, h - 1))
        || (0..h).any(|y| mask.get(0, y) || mask.get(w - 1, y))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            num_users: 2,
            sessions: 1,
            samples_per_session: 2,
            image_size: 96,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_pixels() {
        let a = generate_dataset(&small()).unwrap();
        let b = generate_dataset_with(Execution::Sequential, &small()).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&SyntheticConfig {
            rng_seed: 2,
            ..small()
        })
        .unwrap();
        assert_ne!(a.samples()[0].vis, c.samples()[0].vis);
    }

    #[test]
    fn all_five_fingers_are_labelled() {
        let d = generate_dataset(&small()).unwrap();
        let t = d.samples()[0].truth.as_ref().unwrap();
        for label in 1..=5u8 {
            assert!(
                t.labels.iter().filter(|&&l| l == label).count() > 20,
                "label {label}"
            );
        }
    }

    #[test]
    fn tiny_image_is_rejected() {
        let cfg = SyntheticConfig {
            hand_scale: 1.2,
            ..small()
        };
        assert!(matches!(
            generate_dataset(&cfg),
            Err(HarnessError::ImageTooSmall(96))
        ));
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(SyntheticConfig {
            num_users: 1,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SyntheticConfig {
            cold_finger_prob: 1.5,
            ..small()
        }
        .validate()
        .is_err());
        assert!(SyntheticConfig {
            th_hand: 0.3,
            ..small()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn toml_round_trip() {
        let cfg = SyntheticConfig {
            cold_finger_prob: 0.25,
            rng_seed: 99,
            ..Default::default()
        };
        assert_eq!(SyntheticConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let partial =
            SyntheticConfig::from_toml("num_users = 3\n[sensor_jitter]\nrotation = 0.1\n").unwrap();
        assert_eq!(partial.num_users, 3);
        assert_eq!(
            partial.sensor_jitter.translation,
            SensorJitter::default().translation
        );
    }
}
