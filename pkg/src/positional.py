"""
Este módulo implementa la familia RoPE: RoPE 1D, RoPE 3D y la convención M-RoPE
para tokens de texto.

Funciones principales:
- rope_angles: ángulos θ_i(p) = p / base^(2i/d) de un eje.
- apply_rope_1d / apply_rope_3d: rotación por pares intercalados (x_2i, x_2i+1).
- text_positions: un token de texto es un "vídeo de un solo píxel" situado
  después del bloque de vídeo en el eje temporal.
- PositionLayout: posiciones (p_t, p_h, p_w) de una secuencia de tokens.

Las posiciones pueden ser fraccionarias (necesario para las consultas
interpoladas del FlexFormer).
"""
import math
from dataclasses import dataclass

import numpy as np

from errores import ErrorConfiguracion, ErrorLayout, ErrorNumerico
from numerics import rope_rotate, Tensor

BASE_FRECUENCIA = 10000.0


@dataclass(frozen=True)
class Position3D:
    """Posición espaciotemporal de un token; admite valores fraccionarios."""
    p_t: float
    p_h: float
    p_w: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.p_t, self.p_h, self.p_w)):
            raise ErrorNumerico(f"Posición no finita: {self}")

    def as_tuple(self):
        return (self.p_t, self.p_h, self.p_w)


@dataclass(frozen=True)
class RotaryConfig:
    """
    Configuración de RoPE 3D.

    :param d: Ancho del vector rotado; múltiplo de 6 (tres ejes × pares).
    :param base: Base de frecuencias (> 1).
    """
    d: int
    base: float = BASE_FRECUENCIA

    def __post_init__(self):
        if self.d <= 0 or self.d % 6:
            raise ErrorConfiguracion(f"RotaryConfig.d={self.d} debe ser múltiplo positivo de 6")
        if self.base <= 1:
            raise ErrorConfiguracion(f"RotaryConfig.base={self.base} debe ser > 1")

    @property
    def d_axis(self):
        return self.d // 3


def rope_angles(p, d_axis, base=BASE_FRECUENCIA):
    """
    Ángulos de rotación de un eje.

    :param p: Posición (real) en el eje.
    :param d_axis: Ancho del subvector del eje (par y positivo).
    :param base: Base de frecuencias.
    :return: Array de d_axis/2 ángulos p / base^(2i/d_axis).
    """
    if d_axis <= 0 or d_axis % 2:
        raise ErrorConfiguracion(f"d_axis={d_axis} debe ser par y positivo")
    exponentes = np.arange(0, d_axis, 2, dtype=np.float64) / d_axis
    return p / np.power(base, exponentes)


def _tablas_eje(p, d_axis, base):
    angulos = np.multiply.outer(np.asarray(p, dtype=np.float64), rope_angles(1.0, d_axis, base))
    return np.cos(angulos), np.sin(angulos)


def apply_rope_1d(x, p, base=BASE_FRECUENCIA):
    """Rota cada par (x_2i, x_2i+1) de un vector (d_axis,) por θ_i(p)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    d_axis = x.shape[-1]
    if d_axis <= 0 or d_axis % 2:
        raise ErrorConfiguracion(f"apply_rope_1d necesita un ancho par, recibido {d_axis}")
    cos, sin = _tablas_eje([p], d_axis, base)
    return rope_rotate(x.reshape(1, d_axis), cos, sin).reshape(d_axis)


def apply_rope_3d(x, pos, cfg):
    """
    RoPE 3D: x = x^(t) ⊕ x^(h) ⊕ x^(w), cada subvector de ancho d/3 rotado con
    su componente de posición, y concatenado de nuevo.

    :param x: Tensor (d,) con d = cfg.d.
    :param pos: Position3D del token.
    :param cfg: RotaryConfig.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.shape[-1] != cfg.d or cfg.d % 6:
        raise ErrorConfiguracion(f"apply_rope_3d: ancho {x.shape[-1]} con cfg.d={cfg.d}")
    cos, sin = PositionLayout.from_positions([pos]).rope_tables(cfg.d, cfg.base)
    return rope_rotate(x.reshape(1, cfg.d), cos, sin).reshape(cfg.d)


class PositionLayout:
    """
    Posiciones (p_t, p_h, p_w) de una secuencia de tokens, almacenadas como
    matriz (n, 3).
    """

    def __init__(self, coords):
        coords = np.array(coords, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(coords)):
            raise ErrorNumerico("PositionLayout con posiciones no finitas")
        self.coords = coords

    @classmethod
    def from_positions(cls, posiciones):
        return cls([p.as_tuple() for p in posiciones])

    @classmethod
    def empty(cls):
        return cls(np.zeros((0, 3)))

    def __len__(self):
        return self.coords.shape[0]

    def __getitem__(self, indice):
        if isinstance(indice, slice):
            return PositionLayout(self.coords[indice])
        return Position3D(*(float(v) for v in self.coords[indice]))

    def positions(self):
        return [Position3D(*(float(v) for v in fila)) for fila in self.coords]

    def shifted(self, dt):
        """Copia desplazada `dt` índices en el eje temporal."""
        nuevas = self.coords.copy()
        nuevas[:, 0] += dt
        return PositionLayout(nuevas)

    def concat(self, *otras):
        return PositionLayout(np.concatenate([self.coords] + [o.coords for o in otras], axis=0))

    def rope_tables(self, d, base=BASE_FRECUENCIA):
        """
        Cosenos y senos (n, d/2) para rotar vectores de ancho d (múltiplo de 6):
        los d/6 primeros pares usan p_t, los siguientes p_h y los últimos p_w.
        """
        if d <= 0 or d % 6:
            raise ErrorConfiguracion(f"Ancho RoPE {d} no es múltiplo de 6")
        d_axis = d // 3
        cosenos, senos = [], []
        for eje in range(3):
            cos, sin = _tablas_eje(self.coords[:, eje], d_axis, base)
            cosenos.append(cos)
            senos.append(sin)
        return np.concatenate(cosenos, axis=1), np.concatenate(senos, axis=1)

    def __eq__(self, otra):
        return isinstance(otra, PositionLayout) and np.array_equal(self.coords, otra.coords)

    def __repr__(self):
        return f"PositionLayout(n={len(self)})"


def grid_positions(T, H, W, t0=0):
    """Posiciones enteras del retículo de vídeo en orden (t, h, w) por filas."""
    t, h, w = np.meshgrid(np.arange(T) + t0, np.arange(H), np.arange(W), indexing="ij")
    return PositionLayout(np.stack([t.ravel(), h.ravel(), w.ravel()], axis=1))


def text_positions(n_text, video_extent):
    """
    Posiciones de los tokens de texto: el token j va a (T + j, 0, 0).

    :param n_text: Número de tokens de texto (≥ 0).
    :param video_extent: (T, H, W) del bloque de vídeo que precede al texto.
    :return: Lista de Position3D.
    """
    if n_text < 0:
        raise ErrorLayout(f"n_text={n_text} negativo")
    T = video_extent[0]
    return [Position3D(float(T + j), 0.0, 0.0) for j in range(n_text)]


def text_layout(n_text, video_extent):
    """Igual que text_positions pero como PositionLayout."""
    if n_text == 0:
        return PositionLayout.empty()
    return PositionLayout.from_positions(text_positions(n_text, video_extent))


def text_style_positions(n, start):
    """Posiciones 1D estilo texto (start + j, 0, 0); usadas por las variantes M-RoPE."""
    return PositionLayout([(start + j, 0.0, 0.0) for j in range(n)])
