"""
Este módulo genera los datos sintéticos del sistema: "vídeos latentes" de un
blob gaussiano que se desplaza con velocidad constante sobre una rejilla de
tokens, acompañados de tokens de texto que codifican sus parámetros de
movimiento (el análogo del subtítulo).

Funciones principales:
- sample_clip_spec: parámetros de movimiento aleatorios que mantienen el blob en la rejilla.
- make_clip: rejilla (T, H, W, d) y texto (L, d) deterministas a partir de un ClipSpec.
- split_clip: divide un clip en k segmentos contiguos de igual longitud.
- make_multishot: tomas que comparten radio y amplitud (el "personaje") con
  centro y velocidad distintos.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from errores import ErrorContrato, ErrorEspecificacion
from flexformer import Segment

# Desplazamiento de semillas para los clips de evaluación (disjuntos de los de entrenamiento)
SEMILLA_EVALUACION = 1_000_000
N_PARAMETROS = 6
_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ClipSpec:
    """
    Parámetros de un clip sintético.

    :param center: (c_h, c_w) del blob en el fotograma 0.
    :param velocity: (v_h, v_w) en celdas por fotograma.
    :param radius: Desviación típica del blob en celdas.
    :param amplitude: Intensidad máxima.
    :param grid: (T_total, H, W); T_total múltiplo de 3.
    :param d: Ancho de los tokens.
    :param seed: Semilla del canal de ruido.
    :param noise: Desviación típica del ruido añadido (0 = sin ruido).
    :param n_text: Número de tokens de texto.
    """
    center: tuple
    velocity: tuple
    radius: float
    amplitude: float
    grid: tuple
    d: int
    seed: int = 0
    noise: float = 0.0
    n_text: int = 3

    def __post_init__(self):
        T, H, W = self.grid
        if T < 3 or T % 3:
            raise ErrorEspecificacion(f"T_total={T} debe ser múltiplo positivo de 3")
        if min(H, W, self.d) < 1 or self.n_text < 0:
            raise ErrorEspecificacion(f"Rejilla {self.grid}, d={self.d}, n_text={self.n_text}")
        if self.radius <= 0 or self.amplitude <= 0 or self.noise < 0:
            raise ErrorEspecificacion(
                f"radius={self.radius}, amplitude={self.amplitude}, noise={self.noise}")

    def centro(self, f):
        """Centro del blob en el fotograma f."""
        return (self.center[0] + f * self.velocity[0], self.center[1] + f * self.velocity[1])


class Clip(NamedTuple):
    video: np.ndarray
    text: np.ndarray


def patron_canales(d, frecuencia, fase=0.0):
    """Patrón fijo de canales con RMS unidad."""
    patron = np.cos(2.0 * math.pi * frecuencia * np.arange(d) + fase)
    rms = math.sqrt(float(np.mean(patron ** 2)))
    return patron / rms if rms > 0 else np.ones(d)


def intensidad_blob(spec, f):
    """Mapa (H, W) de intensidad del blob en el fotograma f (forma cerrada)."""
    _, H, W = spec.grid
    c_h, c_w = spec.centro(f)
    h = np.arange(H, dtype=np.float64)[:, None]
    w = np.arange(W, dtype=np.float64)[None, :]
    distancia2 = (h - c_h) ** 2 + (w - c_w) ** 2
    return spec.amplitude * np.exp(-distancia2 / (2.0 * spec.radius ** 2))


def _parametros_normalizados(spec):
    _, H, W = spec.grid
    return np.array([spec.center[0] / max(H - 1, 1), spec.center[1] / max(W - 1, 1),
                     spec.velocity[0], spec.velocity[1], spec.radius, spec.amplitude])


def texto_parametros(spec):
    """
    Tokens de texto (n_text, d): el parámetro m se reparte al token m mod n_text
    multiplicado por el patrón de canales m // n_text.
    """
    L, d = spec.n_text, spec.d
    texto = np.zeros((L, d))
    if L == 0:
        return texto
    for m, valor in enumerate(_parametros_normalizados(spec)):
        texto[m % L] += valor * patron_canales(d, _PHI * (m // L + 2), fase=0.5)
    return texto


def make_clip(spec):
    """
    Genera el clip descrito por `spec`.

    :return: Clip(video (T_total, H, W, d), text (n_text, d)).
    :raises ErrorEspecificacion: Si el centro del blob sale de la rejilla.
    """
    T, H, W = spec.grid
    for f in (0, T - 1):
        c_h, c_w = spec.centro(f)
        if not (0.0 <= c_h <= H - 1 and 0.0 <= c_w <= W - 1):
            raise ErrorEspecificacion(
                f"El blob sale de la rejilla en el fotograma {f}: centro ({c_h:.3f}, {c_w:.3f})")
    patron = patron_canales(spec.d, _PHI)
    intensidades = np.stack([intensidad_blob(spec, f) for f in range(T)])
    video = intensidades[..., None] * patron
    if spec.noise > 0:
        video = video + spec.noise * np.random.default_rng(spec.seed).standard_normal(video.shape)
    return Clip(video, texto_parametros(spec))


def sample_clip_spec(seed, grid=(12, 4, 4), d=48, n_text=3, noise=0.0, radius=None,
                     amplitude=None):
    """
    Parámetros aleatorios válidos: centros inicial y final dentro de la
    rejilla, de modo que la trayectoria rectilínea no sale de ella.
    """
    rng = np.random.default_rng(seed)
    T, H, W = grid
    inicio = rng.uniform([0.0, 0.0], [H - 1, W - 1])
    final = rng.uniform([0.0, 0.0], [H - 1, W - 1])
    velocidad = (final - inicio) / max(T - 1, 1)
    radio = float(rng.uniform(0.6, 1.2)) if radius is None else float(radius)
    amplitud = float(rng.uniform(0.5, 1.5)) if amplitude is None else float(amplitude)
    return ClipSpec(center=(float(inicio[0]), float(inicio[1])),
                    velocity=(float(velocidad[0]), float(velocidad[1])),
                    radius=radio, amplitude=amplitud, grid=tuple(grid), d=d,
                    seed=seed, noise=noise, n_text=n_text)


def split_clip(clip, k):
    """
    Divide un clip en k segmentos contiguos de igual longitud, cada uno con el texto del clip.

    :raises ErrorContrato: Si T_total no es divisible entre k.
    """
    video, texto = clip
    T = video.shape[0]
    if k < 1 or T % k:
        raise ErrorContrato(f"No se puede dividir {T} fotogramas en {k} segmentos iguales")
    n = T // k
    return [Segment.from_arrays(video[i * n:(i + 1) * n], texto) for i in range(k)]


def make_multishot(seed, n_shots, seg_frames, grid_hw=(4, 4), d=48, n_text=3, noise=0.0):
    """
    Tomas de un mismo "personaje": radio y amplitud compartidos, centro y
    velocidad propios de cada toma.

    :return: Lista de n_shots Segment de seg_frames fotogramas.
    """
    rng = np.random.default_rng(seed)
    radio = float(rng.uniform(0.6, 1.2))
    amplitud = float(rng.uniform(0.5, 1.5))
    tomas = []
    for _ in range(n_shots):
        spec = sample_clip_spec(int(rng.integers(2 ** 31)), grid=(3 * seg_frames,) + tuple(grid_hw),
                                d=d, n_text=n_text, noise=noise, radius=radio, amplitude=amplitud)
        tomas.append(split_clip(make_clip(spec), 3)[0])
    return tomas
