use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::geometry::{rotate, Vec3};
use super::{
    Camera, Environment, Material, ParticleKind, Particles, Pose, Primitive, Rgb, SceneSpec, SemanticClass,
    ShapeKind, Sun, WeatherClass, WeatherParams,
};
use crate::rng;

const GEOMETRY_STREAM: u64 = 0x6e0;
const WEATHER_STREAM: u64 = 0x3ea7;

const FACADES: [Rgb; 7] = [
    [0.55, 0.25, 0.18],
    [0.55, 0.55, 0.52],
    [0.75, 0.68, 0.52],
    [0.82, 0.82, 0.80],
    [0.20, 0.28, 0.35],
    [0.70, 0.55, 0.38],
    [0.40, 0.45, 0.55],
];

const PAINTS: [Rgb; 7] = [
    [0.70, 0.08, 0.06],
    [0.10, 0.20, 0.60],
    [0.85, 0.85, 0.85],
    [0.05, 0.05, 0.06],
    [0.60, 0.60, 0.62],
    [0.85, 0.70, 0.10],
    [0.10, 0.40, 0.20],
];

fn jitter(rng: &mut ChaCha8Rng, c: Rgb, amount: f32) -> Rgb {
    let mut out = c;
    for v in out.iter_mut() {
        *v = (*v + rng.random_range(-amount..=amount)).clamp(0.0, 1.0);
    }
    out
}

fn pick(rng: &mut ChaCha8Rng, palette: &[Rgb]) -> Rgb {
    palette[rng.random_range(0..palette.len())]
}

fn boxed(center: Vec3, size: Vec3, yaw: f32, class: SemanticClass, material: Material) -> Primitive {
    Primitive {
        shape: ShapeKind::Box,
        pose: Pose {
            position: center,
            yaw,
            pitch: 0.0,
        },
        size,
        semantic_class: class,
        material,
    }
}

struct Layout {
    road_half: f32,
    buildings: (f32, f32),
    gap: (f32, f32),
    extra_vehicles: (usize, usize),
    pole_spacing: f32,
}

fn layout(env: Environment) -> Layout {
    match env {
        Environment::Urban => Layout {
            road_half: 5.0,
            buildings: (10.0, 30.0),
            gap: (0.5, 3.0),
            extra_vehicles: (1, 4),
            pole_spacing: 14.0,
        },
        Environment::Suburban => Layout {
            road_half: 4.0,
            buildings: (4.0, 8.0),
            gap: (4.0, 10.0),
            extra_vehicles: (0, 3),
            pole_spacing: 18.0,
        },
        Environment::Highway => Layout {
            road_half: 8.0,
            buildings: (3.0, 10.0),
            gap: (15.0, 35.0),
            extra_vehicles: (2, 5),
            pole_spacing: 12.0,
        },
        Environment::Parking => Layout {
            road_half: 10.0,
            buildings: (3.0, 6.0),
            gap: (2.0, 8.0),
            extra_vehicles: (4, 8),
            pole_spacing: 16.0,
        },
    }
}

fn vehicle(rng: &mut ChaCha8Rng, at: Vec3, yaw: f32, out: &mut Vec<Primitive>) {
    let material = Material {
        albedo: {
            let paint = pick(rng, &PAINTS);
            jitter(rng, paint, 0.04)
        },
        roughness: rng.random_range(0.15..0.4),
        metallic: rng.random_range(0.7..=1.0),
    };
    let body = Vec3::new(at.x, 0.75, at.z);
    out.push(boxed(body, Vec3::new(1.8, 1.0, 4.2), yaw, SemanticClass::Vehicle, material));
    let cabin = body + rotate(Vec3::new(0.0, 0.775, 0.3), yaw, 0.0);
    out.push(boxed(cabin, Vec3::new(1.6, 0.55, 2.2), yaw, SemanticClass::Vehicle, material));
}

fn pole(rng: &mut ChaCha8Rng, x: f32, z: f32, out: &mut Vec<Primitive>) {
    let material = Material {
        albedo: jitter(rng, [0.52, 0.53, 0.55], 0.07),
        roughness: rng.random_range(0.3..0.5),
        metallic: rng.random_range(0.75..0.95),
    };
    let height = rng.random_range(5.0..7.0);
    out.push(boxed(
        Vec3::new(x, height * 0.5, z),
        Vec3::new(0.18, height, 0.18),
        0.0,
        SemanticClass::Pole,
        material,
    ));
    out.push(Primitive {
        shape: ShapeKind::Sphere,
        pose: Pose::at(Vec3::new(x, height + 0.2, z)),
        size: Vec3::new(0.25, 0.25, 0.25),
        semantic_class: SemanticClass::Pole,
        material,
    });
}

fn geometry(seed: u64, env: Environment) -> (Vec<Primitive>, Camera) {
    let mut rng = rng::stream(seed, GEOMETRY_STREAM + env as u64);
    let lay = layout(env);
    let rw = lay.road_half;
    let mut prims = Vec::new();

    let asphalt = rng.random_range(0.10..0.22);
    prims.push(Primitive {
        shape: ShapeKind::Plane,
        pose: Pose::at(Vec3::new(0.0, 0.0, 0.0)),
        size: Vec3::new(0.0, 0.0, 0.0),
        semantic_class: SemanticClass::Ground,
        material: Material {
            albedo: jitter(&mut rng, [asphalt, asphalt, asphalt * 1.05], 0.01),
            roughness: rng.random_range(0.7..0.9),
            metallic: 0.0,
        },
    });

    // Sidewalk or verge strips on both sides of the road.
    let verge: Rgb = if env == Environment::Suburban {
        jitter(&mut rng, [0.2, 0.4, 0.14], 0.05)
    } else {
        let g = rng.random_range(0.38..0.5);
        [g, g, g]
    };
    for side in [-1.0f32, 1.0] {
        prims.push(boxed(
            Vec3::new(side * (rw + 1.5), 0.075, -60.0),
            Vec3::new(3.0, 0.15, 120.0),
            0.0,
            SemanticClass::Ground,
            Material {
                albedo: verge,
                roughness: 0.85,
                metallic: 0.0,
            },
        ));
    }

    // Buildings line both sides; the road corridor stays open to the sky.
    let mut n_buildings = 0;
    for side in [-1.0f32, 1.0] {
        let mut z = -rng.random_range(3.0..10.0);
        while z > -95.0 {
            let len = rng.random_range(6.0..14.0);
            let height = rng.random_range(lay.buildings.0..lay.buildings.1);
            let depth = rng.random_range(6.0..12.0);
            let setback = rng.random_range(0.0..2.0);
            let x = side * (rw + 3.0 + setback + depth * 0.5);
            let facade = pick(&mut rng, &FACADES);
            let facade = jitter(&mut rng, facade, 0.05);
            prims.push(boxed(
                Vec3::new(x, height * 0.5, z - len * 0.5),
                Vec3::new(depth, height, len),
                0.0,
                SemanticClass::Building,
                Material {
                    albedo: facade,
                    roughness: rng.random_range(0.5..0.9),
                    metallic: rng.random_range(0.0..0.1),
                },
            ));
            n_buildings += 1;
            z -= len + rng.random_range(lay.gap.0..lay.gap.1);
        }
    }
    debug_assert!(n_buildings > 0);

    // A guaranteed vehicle ahead of the camera, then environment extras.
    let lead_x = rng.random_range(-0.4..0.4) * rw;
    let lead_z = rng.random_range(-14.0..-8.0);
    let lead_yaw = rng.random_range(-0.15..0.15);
    vehicle(&mut rng, Vec3::new(lead_x, 0.0, lead_z), lead_yaw, &mut prims);
    let mut placed = vec![(lead_x, lead_z)];
    let extra = rng.random_range(lay.extra_vehicles.0..=lay.extra_vehicles.1);
    for _ in 0..extra {
        for _attempt in 0..8 {
            let (x, z, yaw) = if env == Environment::Parking {
                let side = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
                (
                    side * rng.random_range(4.0..8.0),
                    -rng.random_range(6.0..40.0),
                    std::f32::consts::FRAC_PI_2 + rng.random_range(-0.05..0.05),
                )
            } else {
                (
                    rng.random_range(-0.8..0.8) * rw,
                    -rng.random_range(8.0..50.0),
                    rng.random_range(-0.08..0.08),
                )
            };
            let clear = placed
                .iter()
                .all(|&(px, pz)| (px - x).abs() > 2.5 || (pz - z).abs() > 5.0);
            if clear {
                vehicle(&mut rng, Vec3::new(x, 0.0, z), yaw, &mut prims);
                placed.push((x, z));
                break;
            }
        }
    }

    // Street lights along the sidewalks.
    for side in [-1.0f32, 1.0] {
        let mut z = -rng.random_range(5.0..12.0);
        while z > -70.0 {
            pole(&mut rng, side * (rw + 0.8), z, &mut prims);
            z -= lay.pole_spacing * rng.random_range(0.8..1.2);
        }
    }
    if env == Environment::Highway {
        let rail = Material {
            albedo: jitter(&mut rng, [0.6, 0.6, 0.62], 0.05),
            roughness: rng.random_range(0.25..0.45),
            metallic: rng.random_range(0.8..0.95),
        };
        for side in [-1.0f32, 1.0] {
            prims.push(boxed(
                Vec3::new(side * (rw + 0.3), 0.6, -50.0),
                Vec3::new(0.12, 0.35, 92.0),
                0.0,
                SemanticClass::Pole,
                rail,
            ));
        }
    }

    let position = Vec3::new(
        rng.random_range(-0.3..0.3) * rw,
        rng.random_range(1.4..2.0),
        0.0,
    );
    let forward = rotate(
        Vec3::new(0.0, 0.0, -1.0),
        rng.random_range(-0.12..0.12),
        rng.random_range(-0.08..0.02),
    );
    let camera = Camera {
        position,
        look_at: position + forward * 10.0,
        vfov_deg: 60.0,
        width: 64,
        height: 64,
    };
    (prims, camera)
}

struct ClassLook {
    sun: Rgb,
    elevation_deg: (f32, f32),
    ambient: Rgb,
    sky: Rgb,
    overcast: (f32, f32),
    fog: (f32, f32),
    airlight: Rgb,
    particle: ParticleKind,
    density: (f32, f32),
    streak: (f32, f32),
}

fn look(class: WeatherClass) -> ClassLook {
    let base = ClassLook {
        sun: [1.6, 1.55, 1.45],
        elevation_deg: (25.0, 65.0),
        ambient: [0.30, 0.33, 0.40],
        sky: [0.45, 0.65, 1.0],
        overcast: (0.0, 0.1),
        fog: (0.0, 0.002),
        airlight: [0.70, 0.80, 0.95],
        particle: ParticleKind::None,
        density: (0.0, 0.0),
        streak: (0.0, 0.0),
    };
    match class.id() {
        0 => base,
        1 => ClassLook {
            overcast: (0.75, 0.9),
            ambient: [0.55, 0.55, 0.58],
            sky: [0.70, 0.72, 0.75],
            fog: (0.003, 0.008),
            airlight: [0.70, 0.70, 0.72],
            ..base
        },
        2 => ClassLook {
            overcast: (0.85, 0.95),
            ambient: [0.35, 0.36, 0.40],
            sky: [0.40, 0.42, 0.46],
            fog: (0.008, 0.015),
            airlight: [0.45, 0.47, 0.50],
            particle: ParticleKind::Rain,
            density: (0.3, 0.6),
            streak: (4.0, 8.0),
            ..base
        },
        3 => ClassLook {
            overcast: (0.6, 0.8),
            ambient: [0.55, 0.58, 0.65],
            sky: [0.80, 0.82, 0.88],
            fog: (0.01, 0.02),
            airlight: [0.85, 0.87, 0.90],
            particle: ParticleKind::Snow,
            density: (0.3, 0.6),
            ..base
        },
        4 => ClassLook {
            overcast: (0.6, 0.8),
            ambient: [0.50, 0.50, 0.52],
            sky: [0.75, 0.75, 0.76],
            fog: (0.025, 0.045),
            airlight: [0.75, 0.75, 0.76],
            ..base
        },
        5 => ClassLook {
            sun: [1.6, 1.35, 1.0],
            overcast: (0.5, 0.7),
            ambient: [0.50, 0.40, 0.28],
            sky: [0.80, 0.60, 0.35],
            fog: (0.02, 0.04),
            airlight: [0.80, 0.60, 0.35],
            particle: ParticleKind::Dust,
            density: (0.2, 0.5),
            ..base
        },
        6 => ClassLook {
            sun: [0.50, 0.55, 0.70],
            elevation_deg: (20.0, 60.0),
            ambient: [0.10, 0.10, 0.14],
            sky: [0.03, 0.04, 0.08],
            overcast: (0.0, 0.0),
            fog: (0.0, 0.003),
            airlight: [0.05, 0.05, 0.08],
            ..base
        },
        7 => ClassLook {
            sun: [0.40, 0.42, 0.50],
            elevation_deg: (20.0, 60.0),
            ambient: [0.10, 0.10, 0.13],
            sky: [0.05, 0.05, 0.07],
            overcast: (0.6, 0.8),
            fog: (0.01, 0.02),
            airlight: [0.08, 0.08, 0.10],
            particle: ParticleKind::Rain,
            density: (0.3, 0.5),
            streak: (4.0, 8.0),
            ..base
        },
        _ => ClassLook {
            sun: [1.5, 0.95, 0.5],
            elevation_deg: (4.0, 14.0),
            ambient: [0.28, 0.22, 0.30],
            sky: [0.90, 0.55, 0.45],
            overcast: (0.0, 0.2),
            fog: (0.002, 0.006),
            airlight: [0.80, 0.55, 0.45],
            ..base
        },
    }
}

fn range(rng: &mut ChaCha8Rng, r: (f32, f32)) -> f32 {
    if r.1 > r.0 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

fn scaled(c: Rgb, k: f32) -> Rgb {
    [c[0] * k, c[1] * k, c[2] * k]
}

/// Weather-dependent lighting for `class`: `(weather, sun, ambient, sky)`.
/// Depends only on `(class, seed)`, never on geometry.
pub fn weather_for_class(class: WeatherClass, seed: u64) -> (WeatherParams, Sun, Rgb, Rgb) {
    let mut rng = rng::stream(seed, WEATHER_STREAM + class.id() as u64);
    let lk = look(class);
    let elevation = range(&mut rng, lk.elevation_deg).to_radians();
    let azimuth = rng.random_range(0.0..std::f32::consts::TAU);
    let direction = Vec3::new(
        elevation.cos() * azimuth.cos(),
        elevation.sin(),
        elevation.cos() * azimuth.sin(),
    )
    .normalized()
    .expect("unit sun direction");
    let sun = Sun {
        direction,
        intensity: scaled(lk.sun, rng.random_range(0.9..1.1)),
    };
    let ambient = scaled(lk.ambient, rng.random_range(0.9..1.1));
    let sky = scaled(lk.sky, rng.random_range(0.9..1.1));
    let weather = WeatherParams {
        class,
        fog_sigma: range(&mut rng, lk.fog),
        airlight: lk.airlight,
        particle: Particles {
            kind: lk.particle,
            density: range(&mut rng, lk.density),
            streak_length: range(&mut rng, lk.streak),
        },
        overcast_factor: range(&mut rng, lk.overcast),
    };
    (weather, sun, ambient, sky)
}

/// Deterministic procedural scene for `(seed, env, weather_class)`.
///
/// Geometry, materials and camera depend on `(seed, env)` only; lighting and
/// weather on `(seed, weather_class)` only, so the same seed and environment
/// under two classes share every material map.
pub fn generate_scene(seed: u64, env: Environment, weather_class: WeatherClass) -> SceneSpec {
    let (primitives, camera) = geometry(seed, env);
    let (weather, sun, ambient, sky) = weather_for_class(weather_class, seed);
    SceneSpec {
        env,
        primitives,
        sun,
        ambient,
        sky,
        weather,
        camera,
        seed,
    }
}

impl SceneSpec {
    /// The same scene under another weather class.
    pub fn reweather(&self, class: WeatherClass) -> SceneSpec {
        let (weather, sun, ambient, sky) = weather_for_class(class, self.seed);
        SceneSpec {
            weather,
            sun,
            ambient,
            sky,
            ..self.clone()
        }
    }

    pub fn with_image_size(mut self, width: usize, height: usize) -> SceneSpec {
        self.camera.width = width;
        self.camera.height = height;
        self
    }
}
