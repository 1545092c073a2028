"""
Generación por segmentos de vídeos largos.

Cada segmento se muestrea con el DiT condicionado por la historia completa
comprimida: el primer segmento con el contexto vacío y cada uno de los
siguientes con `encode_history` sobre todos los anteriores.
"""
from dataclasses import dataclass, field

import numpy as np

from datos_sinteticos import make_clip, make_multishot, sample_clip_spec, split_clip
from dit import PASOS_MUESTREO, TaskLayout, sample_segment
from errores import ErrorConfiguracion
from flexformer import ContextBundle, Segment, encode_history
from modelo import dividir_tarea
from numerics import no_grad


@dataclass
class GeneracionLarga:
    """Vídeo concatenado, segmentos generados y el bundle usado antes de cada uno."""
    video: np.ndarray
    segments: list = field(default_factory=list)
    bundles: list = field(default_factory=list)
    layouts: list = field(default_factory=list)


def _textos(task, n_segments, seed, segment_grid, d, n_text):
    """Texto de cada segmento: el mismo clip en predicción, una toma distinta en multiplano."""
    T, H, W = segment_grid
    if task == "multishot":
        return [toma.text.data for toma in make_multishot(seed, n_segments, T, (H, W), d, n_text)]
    spec = sample_clip_spec(seed, grid=(3 * T, H, W), d=d, n_text=n_text)
    return [make_clip(spec).text] * n_segments


def generate_long(model, n_segments, task="prediction", seed=0, segment_grid=(4, 4, 4),
                  n_text=3, steps=PASOS_MUESTREO, texts=None):
    """
    Genera n_segments segmentos uno a uno.

    :param model: LoViCModel con DiT entrenado.
    :param task: 'prediction' o 'multishot' (en multiplano se inserta el gap del modelo).
    :param seed: Semilla; fija el ruido de cada segmento y los textos.
    :param segment_grid: (T, H, W) de cada segmento.
    :param texts: Textos (L, d) por segmento; por defecto se derivan de la semilla.
    :return: GeneracionLarga.
    """
    if n_segments < 1:
        raise ErrorConfiguracion(f"n_segments={n_segments}: se necesita al menos un segmento")
    if task not in ("prediction", "multishot"):
        raise ErrorConfiguracion(f"generate_long admite 'prediction' o 'multishot', no {task!r}")
    if model.dit is None:
        raise ErrorConfiguracion("El modelo no tiene DiT entrenado")
    d = model.flex.d_model
    T, H, W = segment_grid
    textos = texts if texts is not None else _textos(task, n_segments, seed, segment_grid, d,
                                                     n_text)
    gap = model.gap if task == "multishot" else 0

    resultado = GeneracionLarga(video=np.zeros((0, H, W, d)))
    for i in range(n_segments):
        layout = TaskLayout.build(task, [T] * i, T, gap)
        with no_grad():
            bundle = encode_history(resultado.segments, model.strategy, model.flex, layout) \
                if i else ContextBundle()
        z = sample_segment(model.dit, bundle, layout, (T, H, W, d), textos[i], steps=steps,
                           seed=seed * 1000 + i)
        resultado.segments.append(Segment.from_arrays(z, textos[i]))
        resultado.bundles.append(bundle)
        resultado.layouts.append(layout)
    resultado.video = np.concatenate([s.video.data for s in resultado.segments], axis=0)
    return resultado


@dataclass
class Completado:
    """Segmento generado, su verdad terreno y los segmentos de contexto."""
    generated: np.ndarray
    truth: np.ndarray
    context: list
    layout: TaskLayout


def complete_clip(model, clip, task, seed=0, steps=PASOS_MUESTREO, context_override=None):
    """
    Tarea de un solo plano sobre un clip con verdad terreno.

    :param clip: Clip de tres segmentos.
    :param task: 'prediction', 'interpolation' o 'retrodiction'.
    :param context_override: Segmentos de contexto alternativos (p. ej. la historia de otro clip).
    :return: Completado.
    """
    if model.dit is None:
        raise ErrorConfiguracion("El modelo no tiene DiT entrenado")
    contexto, objetivo = dividir_tarea(split_clip(clip, 3), task)
    if context_override is not None:
        contexto = context_override
    layout = TaskLayout.build(task, [s.frames for s in contexto], objetivo.frames)
    with no_grad():
        bundle = encode_history(contexto, model.strategy, model.flex, layout)
    T, H, W, _ = objetivo.shape
    z = sample_segment(model.dit, bundle, layout, (T, H, W, objetivo.d_model),
                       objetivo.text.data, steps=steps, seed=seed)
    return Completado(z, objetivo.video.data, contexto, layout)
