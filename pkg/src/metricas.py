"""
Métricas de referencia sobre rejillas de tokens: PSNR, SSIM por ventanas y la
línea base "congelar el último fotograma".
"""
import math

import numpy as np
from scipy.ndimage import uniform_filter

from errores import ErrorContrato

PSNR_MAXIMO = 99.0
VENTANA_SSIM = 3


def _comprobar_formas(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ErrorContrato(f"Formas distintas: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b, peak):
    """
    10·log10(peak² / MSE) en dB; MSE = 0 devuelve PSNR_MAXIMO.

    :raises ErrorContrato: Si las formas difieren o peak ≤ 0.
    """
    a, b = _comprobar_formas(a, b)
    if peak <= 0:
        raise ErrorContrato(f"peak={peak} debe ser positivo")
    error = float(np.mean((a - b) ** 2))
    if error == 0.0:
        return PSNR_MAXIMO
    return min(10.0 * math.log10(peak ** 2 / error), PSNR_MAXIMO)


def ssim(a, b, peak):
    """
    SSIM en forma estándar con ventanas espaciales de 3×3, promediado sobre
    fotogramas, posiciones y canales.

    :param a, b: Rejillas (T, H, W, d).
    """
    a, b = _comprobar_formas(a, b)
    if peak <= 0:
        raise ErrorContrato(f"peak={peak} debe ser positivo")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    ventana = (1, VENTANA_SSIM, VENTANA_SSIM, 1)
    mu_a = uniform_filter(a, size=ventana, mode="reflect")
    mu_b = uniform_filter(b, size=ventana, mode="reflect")
    var_a = uniform_filter(a * a, size=ventana, mode="reflect") - mu_a ** 2
    var_b = uniform_filter(b * b, size=ventana, mode="reflect") - mu_b ** 2
    cov = uniform_filter(a * b, size=ventana, mode="reflect") - mu_a * mu_b
    mapa = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / \
        ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2))
    return float(np.mean(mapa))


def freeze_last_frame(context, T):
    """Repite T veces el último fotograma del contexto (T_c, H, W, d) -> (T, H, W, d)."""
    context = np.asarray(context, dtype=np.float64)
    return np.repeat(context[-1:], T, axis=0)


def freeze_first_frame(context, T):
    """Variante para retrodicción: repite el primer fotograma del contexto posterior."""
    context = np.asarray(context, dtype=np.float64)
    return np.repeat(context[:1], T, axis=0)


def peak_of(*grids):
    """Pico de referencia: máximo valor absoluto de las rejillas de verdad terreno."""
    return max(float(np.max(np.abs(np.asarray(g)))) for g in grids) or 1.0
