//! Bundled synthetic face corpus: a parametric ellipse-and-landmark renderer
//! with per-identity parameters and per-image pose/lighting variation, so the
//! entire pipeline can run hermetically when no real face chips are supplied.

use ndarray::Array3;
use rand::Rng;

use crate::error::Result;
use crate::image::tensor::ImageTensor;
use crate::rng::substream;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SynthConfig {
    pub num_identities: usize,
    pub images_per_identity: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_identities: 2,
            images_per_identity: 200,
            height: 64,
            width: 64,
            seed: 17,
        }
    }
}

/// Stable appearance parameters for one identity.
struct IdentityParams {
    skin: [f64; 3],
    hair: [f64; 3],
    iris: [f64; 3],
    lip: [f64; 3],
    bg_a: [f64; 3],
    bg_b: [f64; 3],
    face_rx: f64,
    face_ry: f64,
    eye_dx: f64,
    eye_y: f64,
    eye_r: f64,
    fringe_y: f64,
    mouth_y: f64,
    mouth_rx: f64,
    nose_len: f64,
    brow_tilt: f64,
}

fn pick(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

fn identity_params(seed: u64, id: u64) -> IdentityParams {
    let mut rng = substream(seed, "synth-identity", id);
    let skin_base = pick(&mut rng, 0.45, 0.85);
    let skin = [
        skin_base + pick(&mut rng, 0.05, 0.12),
        skin_base - pick(&mut rng, 0.02, 0.10),
        skin_base - pick(&mut rng, 0.12, 0.22),
    ];
    let hair_tone = pick(&mut rng, 0.08, 0.55);
    let hair = [
        hair_tone * pick(&mut rng, 0.8, 1.3),
        hair_tone * pick(&mut rng, 0.55, 0.95),
        hair_tone * pick(&mut rng, 0.3, 0.8),
    ];
    let iris = [
        pick(&mut rng, 0.05, 0.55),
        pick(&mut rng, 0.15, 0.55),
        pick(&mut rng, 0.15, 0.75),
    ];
    let lip = [
        pick(&mut rng, 0.55, 0.8),
        pick(&mut rng, 0.2, 0.4),
        pick(&mut rng, 0.25, 0.45),
    ];
    let bg_a = [
        pick(&mut rng, 0.1, 0.9),
        pick(&mut rng, 0.1, 0.9),
        pick(&mut rng, 0.1, 0.9),
    ];
    let bg_b = [
        pick(&mut rng, 0.1, 0.9),
        pick(&mut rng, 0.1, 0.9),
        pick(&mut rng, 0.1, 0.9),
    ];
    IdentityParams {
        skin: skin.map(|v| v.clamp(0.05, 0.95)),
        hair: hair.map(|v| v.clamp(0.02, 0.9)),
        iris,
        lip,
        bg_a,
        bg_b,
        face_rx: pick(&mut rng, 0.26, 0.34),
        face_ry: pick(&mut rng, 0.34, 0.44),
        eye_dx: pick(&mut rng, 0.10, 0.15),
        eye_y: pick(&mut rng, -0.12, -0.05),
        eye_r: pick(&mut rng, 0.035, 0.055),
        fringe_y: pick(&mut rng, -0.30, -0.20),
        mouth_y: pick(&mut rng, 0.17, 0.24),
        mouth_rx: pick(&mut rng, 0.07, 0.12),
        nose_len: pick(&mut rng, 0.08, 0.14),
        brow_tilt: pick(&mut rng, -0.2, 0.2),
    }
}

/// Per-image pose and lighting jitter.
struct PoseParams {
    rot: f64,
    scale: f64,
    dx: f64,
    dy: f64,
    brightness: f64,
    mouth_open: f64,
    gaze: f64,
    bg_shift: f64,
    tex_phase: (f64, f64),
}

fn pose_params(seed: u64, id: u64, k: u64) -> PoseParams {
    let mut rng = substream(seed, "synth-pose", id * 1_000_003 + k);
    PoseParams {
        rot: pick(&mut rng, -0.12, 0.12),
        scale: pick(&mut rng, 0.90, 1.10),
        dx: pick(&mut rng, -0.05, 0.05),
        dy: pick(&mut rng, -0.05, 0.05),
        brightness: pick(&mut rng, 0.92, 1.08),
        mouth_open: pick(&mut rng, 0.0, 1.0),
        gaze: pick(&mut rng, -0.35, 0.35),
        bg_shift: pick(&mut rng, -0.15, 0.15),
        tex_phase: (
            pick(&mut rng, 0.0, std::f64::consts::TAU),
            pick(&mut rng, 0.0, std::f64::consts::TAU),
        ),
    }
}

/// Mid-frequency surface texture: skin grain and background weave. Texture
/// directions are identity traits; phases drift per image so models must
/// carry the texture rather than memorize pixels. Keeps rendered chips from
/// being unrealistically smooth.
struct TextureParams {
    skin_freq: (f64, f64),
    skin_freq2: (f64, f64),
    bg_freq: (f64, f64),
    skin_amp: f64,
    bg_amp: f64,
}

fn texture_params(seed: u64, id: u64) -> TextureParams {
    let mut rng = substream(seed, "synth-texture", id);
    let dir = pick(&mut rng, 0.0, std::f64::consts::PI);
    let freq = pick(&mut rng, 5.0, 8.0);
    let dir2 = dir + pick(&mut rng, 0.8, 2.0);
    let freq2 = pick(&mut rng, 9.0, 13.0);
    let bdir = pick(&mut rng, 0.0, std::f64::consts::PI);
    let bfreq = pick(&mut rng, 6.0, 10.0);
    TextureParams {
        skin_freq: (freq * dir.cos(), freq * dir.sin()),
        skin_freq2: (freq2 * dir2.cos(), freq2 * dir2.sin()),
        bg_freq: (bfreq * bdir.cos(), bfreq * bdir.sin()),
        skin_amp: pick(&mut rng, 0.025, 0.04),
        bg_amp: pick(&mut rng, 0.03, 0.05),
    }
}

/// Soft coverage of an ellipse at (cx, cy) with radii (rx, ry) in local
/// units; `aa` is the smoothing width in the same units.
fn ellipse_alpha(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64, aa: f64) -> f64 {
    let d = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt() - 1.0;
    let d_units = d * rx.min(ry);
    1.0 / (1.0 + (d_units / aa).exp().min(1e12))
}

fn blend(dst: &mut [f64; 3], src: [f64; 3], alpha: f64) {
    for c in 0..3 {
        dst[c] = dst[c] * (1.0 - alpha) + src[c] * alpha;
    }
}

/// Render one face image.
pub fn render_face(cfg: &SynthConfig, id: u64, k: u64) -> ImageTensor {
    let idp = identity_params(cfg.seed, id);
    let pose = pose_params(cfg.seed, id, k);
    let tex = texture_params(cfg.seed, id);
    let (h, w) = (cfg.height, cfg.width);
    let aa = 1.4 / h.min(w) as f64;
    let (sin_t, cos_t) = pose.rot.sin_cos();

    let mut img = Array3::zeros((h, w, 3));
    for i in 0..h {
        for j in 0..w {
            // Normalized image coords in [-0.5, 0.5].
            let yn = (i as f64 + 0.5) / h as f64 - 0.5;
            let xn = (j as f64 + 0.5) / w as f64 - 0.5;

            // Background: diagonal gradient between the identity colours.
            let t = (0.5 + 0.45 * (xn + yn) + pose.bg_shift).clamp(0.0, 1.0);
            let mut px = [
                idp.bg_a[0] * (1.0 - t) + idp.bg_b[0] * t,
                idp.bg_a[1] * (1.0 - t) + idp.bg_b[1] * t,
                idp.bg_a[2] * (1.0 - t) + idp.bg_b[2] * t,
            ];

            // Face-local coords: undo shift, rotation, and scale.
            let ux = xn - pose.dx;
            let uy = yn - pose.dy;
            let x = (ux * cos_t + uy * sin_t) / pose.scale;
            let y = (-ux * sin_t + uy * cos_t) / pose.scale;

            // Hair behind the head.
            let hair_a = ellipse_alpha(x, y, 0.0, -0.03, idp.face_rx * 1.22, idp.face_ry * 1.16, aa);
            blend(&mut px, idp.hair, hair_a);

            // Face.
            let face_a = ellipse_alpha(x, y, 0.0, 0.0, idp.face_rx, idp.face_ry, aa);
            blend(&mut px, idp.skin, face_a);

            // Hair fringe: upper part of the face ellipse.
            let fringe_edge = 1.0 / (1.0 + ((y - idp.fringe_y) / aa).exp().min(1e12));
            blend(&mut px, idp.hair, face_a * fringe_edge);

            // Eyes.
            for side in [-1.0, 1.0] {
                let ex = side * idp.eye_dx;
                let sclera = ellipse_alpha(x, y, ex, idp.eye_y, idp.eye_r * 1.5, idp.eye_r, aa);
                blend(&mut px, [0.93, 0.93, 0.9], sclera * face_a);
                let ix = ex + pose.gaze * idp.eye_r;
                let iris = ellipse_alpha(x, y, ix, idp.eye_y, idp.eye_r * 0.72, idp.eye_r * 0.72, aa);
                blend(&mut px, idp.iris, iris * face_a);
                let pupil = ellipse_alpha(x, y, ix, idp.eye_y, idp.eye_r * 0.3, idp.eye_r * 0.3, aa);
                blend(&mut px, [0.03, 0.03, 0.03], pupil * face_a);

                // Brow: a thin tilted ellipse above the eye.
                let by = idp.eye_y - idp.eye_r * 2.1 + side * idp.brow_tilt * idp.eye_r;
                let brow = ellipse_alpha(x, y, ex, by, idp.eye_r * 1.6, idp.eye_r * 0.38, aa);
                let brow_col = [idp.hair[0] * 0.7, idp.hair[1] * 0.7, idp.hair[2] * 0.7];
                blend(&mut px, brow_col, brow * face_a);
            }

            // Nose: slim vertical wedge, slightly darker than skin.
            let nose = ellipse_alpha(x, y, 0.0, idp.nose_len * 0.35, 0.022, idp.nose_len, aa);
            let nose_col = [idp.skin[0] * 0.82, idp.skin[1] * 0.82, idp.skin[2] * 0.82];
            blend(&mut px, nose_col, nose * face_a);

            // Mouth: opening scales the vertical radius.
            let mouth_ry = 0.012 + 0.03 * pose.mouth_open;
            let mouth = ellipse_alpha(x, y, 0.0, idp.mouth_y, idp.mouth_rx, mouth_ry, aa);
            blend(&mut px, idp.lip, mouth * face_a);

            // Surface texture: skin grain inside the face (face-local
            // coordinates so it rides the pose), weave on the background.
            let tau = std::f64::consts::TAU;
            let grain = tex.skin_amp
                * ((tau * (tex.skin_freq.0 * x + tex.skin_freq.1 * y) + pose.tex_phase.0).sin()
                    + 0.6 * (tau * (tex.skin_freq2.0 * x + tex.skin_freq2.1 * y)
                        + pose.tex_phase.1)
                        .sin());
            let weave = tex.bg_amp
                * (tau * (tex.bg_freq.0 * xn + tex.bg_freq.1 * yn) + pose.tex_phase.0).sin();
            let texture = face_a * grain + (1.0 - face_a) * weave;
            for p in px.iter_mut() {
                *p += texture;
            }

            for c in 0..3 {
                img[[i, j, c]] = (px[c] * pose.brightness).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::new(img).expect("rendered face is a valid image")
}

/// Generate the full corpus: `(identity name, images)` per identity.
pub fn generate_corpus(cfg: &SynthConfig) -> Vec<(String, Vec<ImageTensor>)> {
    (0..cfg.num_identities)
        .map(|id| {
            let name = format!("id{id:02}");
            let images = (0..cfg.images_per_identity)
                .map(|k| render_face(cfg, id as u64, k as u64))
                .collect();
            (name, images)
        })
        .collect()
}

/// Write the corpus as an identity-per-subdirectory PNG tree.
pub fn write_corpus(cfg: &SynthConfig, dir: &std::path::Path) -> Result<()> {
    for (name, images) in generate_corpus(cfg) {
        let sub = dir.join(&name);
        std::fs::create_dir_all(&sub).map_err(|e| crate::error::Error::io(&sub, e))?;
        for (k, img) in images.iter().enumerate() {
            let path = sub.join(format!("{name}_{k:04}.png"));
            crate::image::io::save_png(&path, img)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic() {
        let cfg = SynthConfig::default();
        let a = render_face(&cfg, 0, 3);
        let b = render_face(&cfg, 0, 3);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn identities_differ_more_than_poses() {
        let cfg = SynthConfig::default();
        let a0 = render_face(&cfg, 0, 0);
        let a1 = render_face(&cfg, 0, 1);
        let b0 = render_face(&cfg, 1, 0);
        let same_id = a0.l1_distance(&a1).unwrap();
        let cross_id = a0.l1_distance(&b0).unwrap();
        assert!(cross_id > same_id, "cross {cross_id} vs same {same_id}");
    }

    #[test]
    fn images_have_expected_shape_and_range() {
        let cfg = SynthConfig {
            height: 48,
            width: 40,
            ..SynthConfig::default()
        };
        let img = render_face(&cfg, 1, 7);
        assert_eq!(img.data().dim(), (48, 40, 3));
    }
}
