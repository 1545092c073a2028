"""
Módulo config.py
----------------
Configuración de ejecución. El fichero TOML tiene una sección por subcomando
(`[train]`, `[generate]`, `[eval]`, `[plan]`, `[bench]`) más la clave global
`output_dir`. Las claves desconocidas son un error de configuración.

Precedencia: valores por defecto < fichero < opciones de la línea de órdenes.
La variable de entorno `LOVIC_OUT` sustituye el directorio de salida.
"""
import os
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, \
    model_validator

from compression import normalizar_orientacion, parse_strategy
from dit import GAP_MULTIPLANO, PASOS_MUESTREO, TAREAS
from errores import ErrorConfiguracion
from flexformer import VARIANTES

# Rutas del proyecto
BASE_DIR = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
OUTPUT_DIR = os.path.join(BASE_DIR, "data", "output")
VARIABLE_SALIDA = "LOVIC_OUT"

# Escala completa; sólo se aplica si se pide explícitamente
PRESET_ESCALA_COMPLETA = {
    1: {"steps": 20000, "batch_size": 128},
    2: {"steps": 30000, "batch_size": 128},
    3: {"steps": 10000, "batch_size": 128},
}


def _validar_estrategia(texto):
    try:
        parse_strategy(texto)
    except ErrorConfiguracion as e:
        raise ValueError(str(e)) from e
    return texto


class Seccion(BaseModel):
    model_config = ConfigDict(extra="forbid")


class TrainConfig(Seccion):
    """Parámetros de una etapa de entrenamiento."""
    stage: Literal[1, 2, 3] = 1
    steps: int = Field(500, ge=0)
    batch_size: int = Field(8, gt=0)
    learning_rate: float = Field(3e-4, gt=0)
    strategy: str = "linear:8:1"
    d_model: int = Field(48, gt=0)
    heads: int = Field(4, gt=0)
    enc_blocks: int = Field(4, ge=0)
    dec_blocks: int = Field(4, ge=0)
    dit_blocks: int = Field(4, ge=0)
    variant: str = "irope"
    n_fixed_queries: Optional[int] = Field(None, gt=0)
    grid: Tuple[int, int, int] = (12, 4, 4)
    n_text: int = Field(3, ge=0)
    noise: float = Field(0.0, ge=0)
    seed: int = 0
    task_mix: Optional[Dict[str, float]] = None
    gap: int = Field(GAP_MULTIPLANO, ge=0)
    shots: int = Field(3, ge=2)
    checkpoint_in: Optional[Path] = None
    preset: Optional[Literal["escala_completa"]] = None

    @field_validator("strategy")
    @classmethod
    def _estrategia(cls, valor):
        return _validar_estrategia(valor)

    @field_validator("variant")
    @classmethod
    def _variante(cls, valor):
        if valor not in VARIANTES:
            raise ValueError(f"Variante desconocida: {valor!r}; opciones {VARIANTES}")
        return valor

    @field_validator("grid")
    @classmethod
    def _rejilla(cls, valor):
        if min(valor) < 1 or valor[0] % 3:
            raise ValueError(f"Rejilla {valor}: T_total debe ser múltiplo positivo de 3")
        return valor

    @field_validator("task_mix")
    @classmethod
    def _mezcla(cls, valor):
        if valor is None:
            return valor
        desconocidas = set(valor) - set(TAREAS)
        if desconocidas:
            raise ValueError(f"Tareas desconocidas en task_mix: {sorted(desconocidas)}")
        if any(p < 0 for p in valor.values()) or sum(valor.values()) <= 0:
            raise ValueError("Los pesos de task_mix deben ser no negativos y sumar más de 0")
        return valor

    @model_validator(mode="after")
    def _aplicar_preset(self):
        if self.preset == "escala_completa":
            for clave, valor in PRESET_ESCALA_COMPLETA[self.stage].items():
                setattr(self, clave, valor)
        if self.variant == "mrope_multi" and self.n_fixed_queries is None:
            raise ValueError("La variante 'mrope_multi' necesita n_fixed_queries")
        return self

    def mezcla_tareas(self):
        """Pesos de tarea efectivos (orden fijo de TAREAS)."""
        if self.task_mix is not None:
            mezcla = self.task_mix
        elif self.stage == 3:
            mezcla = {"prediction": 1.0, "interpolation": 1.0, "retrodiction": 1.0,
                      "multishot": 3.0}
        else:
            mezcla = {"prediction": 1.0, "interpolation": 1.0, "retrodiction": 1.0}
        return {tarea: float(mezcla[tarea]) for tarea in TAREAS if mezcla.get(tarea, 0) > 0}


class GenerateConfig(Seccion):
    task: Literal["prediction", "interpolation", "retrodiction", "multishot"] = "prediction"
    segments: int = 3
    steps: int = PASOS_MUESTREO
    seed: int = 0
    checkpoint: Optional[Path] = None
    strategy: Optional[str] = None
    gap: int = Field(GAP_MULTIPLANO, ge=0)
    segment_grid: Tuple[int, int, int] = (4, 4, 4)
    n_text: int = Field(3, ge=0)

    @field_validator("strategy")
    @classmethod
    def _estrategia(cls, valor):
        return valor if valor is None else _validar_estrategia(valor)


class EvalConfig(Seccion):
    kind: Literal["context", "ablation", "strategy"] = "context"
    clips: int = Field(32, gt=0)
    seeds: List[int] = [0, 1, 2]
    steps: int = Field(PASOS_MUESTREO, gt=0)
    checkpoint: Optional[Path] = None
    tasks: List[Literal["prediction", "interpolation", "retrodiction"]] = ["prediction"]
    variants: List[str] = ["irope", "mrope_single", "mrope_multi"]
    ablation_steps: int = Field(300, ge=0)
    ablation_batch: int = Field(4, gt=0)
    ablation_strategy: str = "uniform:4"
    strategies: List[str] = ["uniform:8", "uniform:4", "linear:16:1", "log:16:1"]
    strategy_steps: int = Field(300, ge=0)
    strategy_batch: int = Field(4, gt=0)

    @field_validator("variants")
    @classmethod
    def _variantes(cls, valor):
        for variante in valor:
            if variante not in VARIANTES:
                raise ValueError(f"Variante desconocida: {variante!r}")
        return valor

    @field_validator("ablation_strategy")
    @classmethod
    def _estrategia(cls, valor):
        return _validar_estrategia(valor)

    @field_validator("strategies")
    @classmethod
    def _estrategias(cls, valor):
        if not valor:
            raise ValueError("Se necesita al menos una estrategia")
        return [_validar_estrategia(texto) for texto in valor]


class PlanConfig(Seccion):
    strategy: str = "linear:16:1"
    grid: Tuple[int, int, int] = (256, 4, 4)
    orientation: str = "past-context"

    @field_validator("strategy")
    @classmethod
    def _estrategia(cls, valor):
        return _validar_estrategia(valor)

    @field_validator("orientation")
    @classmethod
    def _orientacion(cls, valor):
        try:
            return normalizar_orientacion(valor)
        except ErrorConfiguracion as e:
            raise ValueError(str(e)) from e


class BenchConfig(Seccion):
    segments: int = Field(8, gt=0)
    seg_tokens: int = Field(128, gt=0)
    strategy: str = "uniform:8"
    ratio: Optional[float] = Field(None, ge=1)
    d_model: int = Field(48, gt=0)
    heads: int = Field(4, gt=0)
    blocks: int = Field(4, gt=0)
    frame_hw: Tuple[int, int] = (4, 4)
    repetitions: int = Field(3, gt=0)
    measure: bool = True
    seed: int = 0

    @field_validator("strategy")
    @classmethod
    def _estrategia(cls, valor):
        return _validar_estrategia(valor)

    def estrategia_efectiva(self):
        """`--ratio r` equivale a `uniform:r`."""
        return f"uniform:{self.ratio:g}" if self.ratio is not None else self.strategy


class RunConfig(Seccion):
    output_dir: Path = Path(OUTPUT_DIR)
    train: TrainConfig = TrainConfig()
    generate: GenerateConfig = GenerateConfig()
    eval: EvalConfig = EvalConfig()
    plan: PlanConfig = PlanConfig()
    bench: BenchConfig = BenchConfig()

    def resuelta(self):
        """Copia con todas las rutas absolutas."""
        train = self.train.model_copy(update={
            "checkpoint_in": self.train.checkpoint_in and self.train.checkpoint_in.resolve()})
        generate = self.generate.model_copy(update={
            "checkpoint": self.generate.checkpoint and self.generate.checkpoint.resolve()})
        evaluacion = self.eval.model_copy(update={
            "checkpoint": self.eval.checkpoint and self.eval.checkpoint.resolve()})
        return self.model_copy(update={"output_dir": self.output_dir.resolve(), "train": train,
                                       "generate": generate, "eval": evaluacion})


def leer_toml(ruta):
    """Lee un fichero TOML; ErrorConfiguracion si no existe o no es válido."""
    ruta = Path(ruta)
    if not ruta.exists():
        raise ErrorConfiguracion(f"No se encontró el fichero de configuración: {ruta}")
    try:
        with open(ruta, "rb") as f:
            return tomli.load(f)
    except tomli.TOMLDecodeError as e:
        raise ErrorConfiguracion(f"Fichero de configuración inválido {ruta}: {e}") from e


def construir_config(ruta=None, seccion=None, overrides=None):
    """
    Combina valores por defecto, fichero TOML, opciones de la CLI y `LOVIC_OUT`.

    :param ruta: Fichero TOML opcional.
    :param seccion: Sección a la que se aplican los `overrides`.
    :param overrides: Diccionario de opciones de la CLI (se ignoran los None).
    :return: RunConfig con rutas resueltas.
    :raises ErrorConfiguracion: Claves desconocidas o valores inválidos.
    """
    datos = dict(leer_toml(ruta)) if ruta else {}
    if seccion:
        valores = dict(datos.get(seccion, {}))
        valores.update({k: v for k, v in (overrides or {}).items() if v is not None})
        datos[seccion] = valores
    salida = os.environ.get(VARIABLE_SALIDA)
    if salida:
        datos["output_dir"] = salida
    try:
        return RunConfig.model_validate(datos).resuelta()
    except ValidationError as e:
        errores = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}"
                            for err in e.errors())
        raise ErrorConfiguracion(f"Configuración inválida: {errores}") from e
