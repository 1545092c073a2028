"""
Modelo completo (FlexFormer + DiT) y su persistencia en checkpoints `LVCK`.

El checkpoint guarda, además de los parámetros `flexformer.*` y `dit.*`, unos
registros `meta.*` con lo que no se puede deducir de las formas: número de
cabezas, variante de consultas, estrategia de compresión y gap multiplano.
"""
import re
from dataclasses import dataclass
from typing import Optional

import numpy as np

from checkpoint_utils import load_checkpoint, save_checkpoint
from compression import TIPOS_ESTRATEGIA, CompressionStrategy
from dit import GAP_MULTIPLANO, DiTParams
from errores import ErrorCheckpoint, ErrorConfiguracion, ErrorContrato
from flexformer import VARIANTES, FlexFormerParams


@dataclass
class LoViCModel:
    flex: FlexFormerParams
    dit: Optional[DiTParams]
    strategy: CompressionStrategy
    gap: int = GAP_MULTIPLANO


def estado_modelo(model):
    """Diccionario nombre -> array en el orden en que se escribe el checkpoint."""
    flex = model.flex
    estado = {
        "meta.heads": np.array([flex.heads], dtype=np.float64),
        "meta.dit_heads": np.array([model.dit.heads if model.dit else 0], dtype=np.float64),
        "meta.variant": np.array([VARIANTES.index(flex.variant)], dtype=np.float64),
        "meta.n_fixed_queries": np.array([flex.n_fixed_queries or 0], dtype=np.float64),
        "meta.strategy": np.array([TIPOS_ESTRATEGIA.index(model.strategy.kind),
                                   model.strategy.r_far, model.strategy.r_near]),
        "meta.gap": np.array([model.gap], dtype=np.float64),
    }
    estado.update(flex.parameters().state())
    if model.dit is not None:
        estado.update(model.dit.parameters().state())
    return estado


def guardar_modelo(ruta, model):
    return save_checkpoint(ruta, estado_modelo(model))


def _contar_bloques(estado, prefijo):
    patron = re.compile(re.escape(prefijo) + r"(\d+)\.wq$")
    return sum(1 for nombre in estado if patron.match(nombre))


def cargar_modelo(ruta):
    """
    Reconstruye un LoViCModel desde un checkpoint; las dimensiones se deducen
    de las formas guardadas.

    :raises ErrorCheckpoint: Si faltan registros o no encajan con la arquitectura.
    """
    estado = load_checkpoint(ruta)
    try:
        heads = int(estado["meta.heads"][0])
        dit_heads = int(estado["meta.dit_heads"][0])
        variante = VARIANTES[int(estado["meta.variant"][0])]
        n_fijas = int(estado["meta.n_fixed_queries"][0]) or None
        tipo, r_far, r_near = estado["meta.strategy"]
        d_model = int(estado["flexformer.enc_in"].shape[0])
        gap = int(estado["meta.gap"][0])
    except (KeyError, IndexError, ValueError) as e:
        raise ErrorCheckpoint(f"{ruta}: checkpoint sin metadatos de modelo ({e})") from e

    flex = FlexFormerParams(d_model, heads, _contar_bloques(estado, "flexformer.enc."),
                            _contar_bloques(estado, "flexformer.dec."), variant=variante,
                            n_fixed_queries=n_fijas)
    dit = None
    if "dit.video_in" in estado:
        dit = DiTParams(d_model, dit_heads, _contar_bloques(estado, "dit.block."))
    try:
        flex.parameters().load_state(estado)
        if dit is not None:
            dit.parameters().load_state(estado)
    except ErrorConfiguracion as e:
        raise ErrorCheckpoint(f"{ruta}: {e}") from e
    estrategia = CompressionStrategy(TIPOS_ESTRATEGIA[int(tipo)], float(r_far), float(r_near))
    return LoViCModel(flex, dit, estrategia, gap)


def dividir_tarea(segmentos, tarea):
    """
    Contexto y objetivo de una tarea de un plano sobre los tres segmentos de un clip.

    prediction: contexto = dos primeros, objetivo = tercero.
    interpolation: contexto = primero y tercero, objetivo = segundo.
    retrodiction: contexto = dos últimos, objetivo = primero.
    """
    if len(segmentos) != 3:
        raise ErrorContrato(f"Se esperaban 3 segmentos, recibidos {len(segmentos)}")
    s0, s1, s2 = segmentos
    if tarea == "prediction":
        return [s0, s1], s2
    if tarea == "interpolation":
        return [s0, s2], s1
    if tarea == "retrodiction":
        return [s1, s2], s0
    raise ErrorContrato(f"La tarea {tarea!r} no es de un solo plano")
