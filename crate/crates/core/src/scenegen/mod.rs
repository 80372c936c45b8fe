//! Procedural driving-scene generator producing paired images and intrinsic
//! maps under controlled weather.
//!
//! A scene is a [`SceneSpec`]: analytic primitives with PBR-style materials,
//! a sun, ambient light, a camera and [`WeatherParams`]. Rendering goes
//! through three pure stages: [`render_gbuffer`] (ray cast, nearest hit wins),
//! [`shade`] (Lambert + a single specular lobe + one hard shadow ray) and
//! [`apply_weather`] (depth fog, then screen-space particles). Weather only
//! ever touches the image and the irradiance; albedo, normal, roughness and
//! metallic depend on geometry and materials alone.

mod generate;
pub mod geometry;
mod render;
mod weather;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use generate::{generate_scene, weather_for_class};
pub use geometry::Vec3;
pub use render::{render_gbuffer, render_scene, shade, specular_exponent, specular_strength, SKY_DEPTH};
pub use weather::{apply_weather, fog_transmittance};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Rgb = [f32; 3];

/// One of the nine weather/lighting categories fed to the weather controller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct WeatherClass(u8);

impl WeatherClass {
    pub const COUNT: usize = 9;
    pub const NAMES: [&'static str; 9] = [
        "sunny",
        "overcast",
        "rainy/thunderstorm",
        "snow",
        "foggy",
        "sandstorm",
        "night-clear",
        "night-rain",
        "dawn/dusk",
    ];

    pub const SUNNY: WeatherClass = WeatherClass(0);
    pub const OVERCAST: WeatherClass = WeatherClass(1);
    pub const RAINY: WeatherClass = WeatherClass(2);
    pub const SNOW: WeatherClass = WeatherClass(3);
    pub const FOGGY: WeatherClass = WeatherClass(4);
    pub const SANDSTORM: WeatherClass = WeatherClass(5);
    pub const NIGHT_CLEAR: WeatherClass = WeatherClass(6);
    pub const NIGHT_RAIN: WeatherClass = WeatherClass(7);
    pub const DAWN_DUSK: WeatherClass = WeatherClass(8);

    pub fn new(id: usize) -> Result<Self> {
        if id < Self::COUNT {
            Ok(Self(id as u8))
        } else {
            Err(Error::Range(format!(
                "weather class id {id} (expected 0..{})",
                Self::COUNT
            )))
        }
    }

    pub fn all() -> impl Iterator<Item = WeatherClass> {
        (0..Self::COUNT as u8).map(WeatherClass)
    }

    pub fn id(self) -> usize {
        self.0 as usize
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.id()]
    }

    pub fn one_hot(self) -> [f32; 9] {
        let mut v = [0.0; 9];
        v[self.id()] = 1.0;
        v
    }

    /// Comma-separated list of accepted names, for diagnostics.
    pub fn name_list() -> String {
        Self::NAMES.join(", ")
    }
}

impl TryFrom<u8> for WeatherClass {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        WeatherClass::new(v as usize)
    }
}

impl From<WeatherClass> for u8 {
    fn from(w: WeatherClass) -> u8 {
        w.0
    }
}

impl fmt::Display for WeatherClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for WeatherClass {
    type Err = Error;

    /// Accepts the canonical names, the halves of the combined names
    /// (`rainy`, `thunderstorm`, `dawn`, `dusk`), `_`/space for `-`, or a
    /// numeric id.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        if let Ok(id) = norm.parse::<usize>() {
            return WeatherClass::new(id);
        }
        let alias = match norm.as_str() {
            "rainy" | "rain" | "thunderstorm" => Some(2),
            "snowy" => Some(3),
            "fog" => Some(4),
            "dawn" | "dusk" => Some(8),
            _ => None,
        };
        if let Some(id) = alias {
            return WeatherClass::new(id);
        }
        Self::NAMES
            .iter()
            .position(|n| *n == norm)
            .map(|i| WeatherClass(i as u8))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown weather class '{s}'; expected one of: {}",
                    Self::name_list()
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    Urban,
    Suburban,
    Highway,
    Parking,
}

impl Environment {
    pub const ALL: [Environment; 4] = [
        Environment::Urban,
        Environment::Suburban,
        Environment::Highway,
        Environment::Parking,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Environment::Urban => "urban",
            Environment::Suburban => "suburban",
            Environment::Highway => "highway",
            Environment::Parking => "parking",
        }
    }
}

impl FromStr for Environment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Environment::ALL
            .iter()
            .copied()
            .find(|e| e.name() == s.trim().to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown environment '{s}'")))
    }
}

/// Scene-level semantic classes; ids double as the MAA class vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SemanticClass {
    Sky = 0,
    Ground = 1,
    Building = 2,
    Vehicle = 3,
    Pole = 4,
}

impl SemanticClass {
    pub const COUNT: usize = 5;

    pub fn id(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub albedo: Rgb,
    pub roughness: f32,
    pub metallic: f32,
}

/// Primitive shape; `size` is interpreted per shape (see [`Primitive`]).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Plane,
    Sphere,
    Box,
}

/// Placement: translation plus yaw (about +y) and pitch (about +x).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f32,
    pub pitch: f32,
}

impl Pose {
    pub fn at(position: Vec3) -> Self {
        Self {
            position,
            yaw: 0.0,
            pitch: 0.0,
        }
    }
}

/// An analytic primitive.
///
/// * plane: local normal `+y`; `size.x`/`size.z` are full extents, 0 = unbounded
/// * sphere: radius `size.x`
/// * box: full extents `size`
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: ShapeKind,
    pub pose: Pose,
    pub size: Vec3,
    pub semantic_class: SemanticClass,
    pub material: Material,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sun {
    /// Unit vector pointing from the scene toward the sun.
    pub direction: Vec3,
    pub intensity: Rgb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParticleKind {
    None,
    Rain,
    Snow,
    Dust,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Particles {
    pub kind: ParticleKind,
    pub density: f32,
    pub streak_length: f32,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeatherParams {
    pub class: WeatherClass,
    pub fog_sigma: f32,
    pub airlight: Rgb,
    pub particle: Particles,
    /// Fraction of direct sun removed by cloud cover.
    pub overcast_factor: f32,
}

impl WeatherParams {
    /// Clear air, no particles, no cloud cover.
    pub fn clear(class: WeatherClass) -> Self {
        Self {
            class,
            fog_sigma: 0.0,
            airlight: [0.0; 3],
            particle: Particles {
                kind: ParticleKind::None,
                density: 0.0,
                streak_length: 0.0,
            },
            overcast_factor: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let kind_ok = match self.class {
            WeatherClass::RAINY | WeatherClass::NIGHT_RAIN => self.particle.kind == ParticleKind::Rain,
            WeatherClass::SNOW => self.particle.kind == ParticleKind::Snow,
            _ => matches!(self.particle.kind, ParticleKind::None | ParticleKind::Dust),
        };
        if !kind_ok {
            return Err(Error::Config(format!(
                "particle kind {:?} inconsistent with weather class {}",
                self.particle.kind, self.class
            )));
        }
        let unit = |x: f32| (0.0..=1.0).contains(&x);
        if !(self.fog_sigma >= 0.0
            && self.airlight.iter().all(|&c| c >= 0.0)
            && unit(self.particle.density)
            && self.particle.streak_length >= 0.0
            && unit(self.overcast_factor))
        {
            return Err(Error::Config("weather parameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: Vec3,
    pub look_at: Vec3,
    pub vfov_deg: f32,
    pub width: usize,
    pub height: usize,
}

/// Orthonormal camera frame: `right`, `up`, `forward` (camera space looks
/// down `-z`, so camera `+z` is `-forward`).
#[derive(Clone, Copy, Debug)]
pub struct CameraFrame {
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
}

impl Camera {
    pub fn frame(&self) -> Result<CameraFrame> {
        let forward = (self.look_at - self.position)
            .normalized()
            .ok_or(Error::DegenerateCamera)?;
        let world_up = Vec3::new(0.0, 1.0, 0.0);
        let right = forward
            .cross(world_up)
            .normalized()
            .or_else(|| forward.cross(Vec3::new(0.0, 0.0, -1.0)).normalized())
            .ok_or(Error::DegenerateCamera)?;
        let up = right.cross(forward);
        Ok(CameraFrame { right, up, forward })
    }

    /// Unit world-space ray direction through the center of pixel (`row`, `col`).
    pub fn ray_dir(&self, frame: &CameraFrame, row: usize, col: usize) -> Vec3 {
        let tan = (self.vfov_deg.to_radians() * 0.5).tan();
        let aspect = self.width as f32 / self.height as f32;
        let sx = (2.0 * (col as f32 + 0.5) / self.width as f32 - 1.0) * tan * aspect;
        let sy = (1.0 - 2.0 * (row as f32 + 0.5) / self.height as f32) * tan;
        (frame.forward + frame.right * sx + frame.up * sy)
            .normalized()
            .unwrap_or(frame.forward)
    }
}

impl CameraFrame {
    pub fn world_to_camera(&self, v: Vec3) -> Vec3 {
        Vec3::new(v.dot(self.right), v.dot(self.up), -v.dot(self.forward))
    }

    pub fn camera_to_world(&self, v: Vec3) -> Vec3 {
        self.right * v.x + self.up * v.y - self.forward * v.z
    }
}

/// Parametric description of one procedural scene view.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub env: Environment,
    pub primitives: Vec<Primitive>,
    pub sun: Sun,
    pub ambient: Rgb,
    /// Sky radiance at the horizon.
    pub sky: Rgb,
    pub weather: WeatherParams,
    pub camera: Camera,
    pub seed: u64,
}

impl SceneSpec {
    pub fn validate(&self, patch_size: usize) -> Result<()> {
        let n = self.sun.direction.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!("sun direction norm {n} is not 1")));
        }
        let unit = |x: f32| (0.0..=1.0).contains(&x);
        for p in &self.primitives {
            let m = &p.material;
            if !(m.albedo.iter().all(|&a| unit(a)) && unit(m.roughness) && unit(m.metallic)) {
                return Err(Error::Config("material scalar outside [0, 1]".into()));
            }
        }
        let (w, h) = (self.camera.width, self.camera.height);
        if w == 0 || h == 0 || patch_size == 0 || w % patch_size != 0 || h % patch_size != 0 {
            return Err(Error::Config(format!(
                "image size {w}x{h} must be positive and divisible by {patch_size}"
            )));
        }
        self.weather.validate()
    }
}

/// Geometry and material buffers from the ray-cast pass. All tensors are
/// `[H, W, C]`, row-major, row 0 at the top of the image.
#[derive(Clone, Debug, PartialEq)]
pub struct GBuffer {
    pub albedo: Tensor,
    /// Camera-space unit normals.
    pub normal: Tensor,
    pub roughness: Tensor,
    pub metallic: Tensor,
    /// Euclidean ray distance; [`SKY_DEPTH`] where the ray escapes.
    pub depth: Tensor,
    /// [`SemanticClass`] ids stored as floats.
    pub semantics: Tensor,
}

impl GBuffer {
    pub fn height(&self) -> usize {
        self.albedo.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.albedo.shape()[1]
    }
}

/// The five intrinsic maps plus depth, semantics and the final image.
#[derive(Clone, Debug, PartialEq)]
pub struct IntrinsicStack {
    pub gbuffer: GBuffer,
    /// Linear incident light, `[H, W, 3]`.
    pub irradiance: Tensor,
    /// Linear rendered image after weather, `[H, W, 3]`.
    pub image: Tensor,
}

/// The intrinsic maps a model can decompose into or render from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntrinsicMap {
    Albedo,
    Normal,
    Roughness,
    Metallic,
    Irradiance,
}

impl IntrinsicMap {
    pub const ALL: [IntrinsicMap; 5] = [
        IntrinsicMap::Albedo,
        IntrinsicMap::Normal,
        IntrinsicMap::Roughness,
        IntrinsicMap::Metallic,
        IntrinsicMap::Irradiance,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            IntrinsicMap::Albedo => "albedo",
            IntrinsicMap::Normal => "normal",
            IntrinsicMap::Roughness => "roughness",
            IntrinsicMap::Metallic => "metallic",
            IntrinsicMap::Irradiance => "irradiance",
        }
    }

    /// Native channel count of the map.
    pub fn channels(self) -> usize {
        match self {
            IntrinsicMap::Roughness | IntrinsicMap::Metallic => 1,
            _ => 3,
        }
    }
}

impl fmt::Display for IntrinsicMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntrinsicMap {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let s = match s.as_str() {
            "metallicity" => "metallic",
            other => other,
        };
        IntrinsicMap::ALL
            .iter()
            .copied()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown intrinsic map '{s}'; expected albedo, normal, roughness, metallic or irradiance"
                ))
            })
    }
}

impl IntrinsicStack {
    pub fn map(&self, which: IntrinsicMap) -> &Tensor {
        match which {
            IntrinsicMap::Albedo => &self.gbuffer.albedo,
            IntrinsicMap::Normal => &self.gbuffer.normal,
            IntrinsicMap::Roughness => &self.gbuffer.roughness,
            IntrinsicMap::Metallic => &self.gbuffer.metallic,
            IntrinsicMap::Irradiance => &self.irradiance,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_classes_with_single_hot() {
        assert_eq!(WeatherClass::all().count(), 9);
        for c in WeatherClass::all() {
            let oh = c.one_hot();
            assert_eq!(oh.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(oh.iter().filter(|&&x| x == 0.0).count(), 8);
            assert_eq!(c.name().parse::<WeatherClass>().unwrap(), c);
        }
        assert!(WeatherClass::new(9).is_err());
    }

    #[test]
    fn weather_aliases() {
        assert_eq!("thunderstorm".parse::<WeatherClass>().unwrap(), WeatherClass::RAINY);
        assert_eq!("Night_Clear".parse::<WeatherClass>().unwrap(), WeatherClass::NIGHT_CLEAR);
        let err = "hail".parse::<WeatherClass>().unwrap_err().to_string();
        assert!(err.contains("sunny") && err.contains("dawn/dusk"));
    }

    #[test]
    fn degenerate_camera() {
        let cam = Camera {
            position: Vec3::new(1.0, 2.0, 3.0),
            look_at: Vec3::new(1.0, 2.0, 3.0),
            vfov_deg: 60.0,
            width: 4,
            height: 4,
        };
        assert!(matches!(cam.frame(), Err(Error::DegenerateCamera)));
    }
}
