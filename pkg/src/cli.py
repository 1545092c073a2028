"""
Interfaz de línea de órdenes.

Subcomandos:
- train --stage {1|2|3}: entrena una etapa y escribe checkpoint y registro de pérdidas.
- generate --task {prediction|interpolation|retrodiction|multishot}: genera rejillas de tokens.
- eval --kind {context|ablation|strategy}: utilidad del contexto, ablación de consultas
  o barrido de estrategias de compresión sobre la etapa 2.
- plan --strategy ... --grid TxHxW: inspecciona un plan de compresión.
- bench: tabla de costes de atención y microbenchmark.

Cada fichero escrito se anuncia en la salida estándar con una línea
`ARTIFACT <ruta>` y cada subcomando termina con una línea de resumen. Códigos
de salida: 0 éxito, 1 error de uso o de configuración, 2 error de ejecución.
"""
import os
import sys
from pathlib import Path
from typing import Optional

import click
import pandas as pd
import typer

import consola
from checkpoint_utils import save_bundle, save_csv, save_token_grid
from compression import continuous_ratio, format_plan, overall_ratio, parse_strategy, \
    plan_queries
from config import construir_config
from costmodel import microbench, scaling_table, write_cost_csv
from datos_sinteticos import SEMILLA_EVALUACION, make_clip, sample_clip_spec
from entrenamiento import NOMBRES_CHECKPOINT, suavizar, train_stage
from errores import ErrorArranque, ErrorConfiguracion, ErrorLovic
from evaluacion import evaluate_context_utility, run_ablation, run_strategy_sweep
from generacion import complete_clip, generate_long
from metricas import peak_of, psnr
from modelo import cargar_modelo

app = typer.Typer(add_completion=False, no_args_is_help=True, pretty_exceptions_enable=False,
                  help="LoViC de escritorio: compresión de contexto y generación por segmentos.")

OPCION_CONFIG = typer.Option(None, "--config", help="Fichero TOML de configuración.")


def _parsear_rejilla(texto, ejes=3):
    """`256x4x4` -> [256, 4, 4]."""
    if texto is None:
        return None
    try:
        valores = [int(v) for v in texto.lower().split("x")]
    except ValueError as e:
        raise ErrorConfiguracion(f"Rejilla mal formada: {texto!r} (use TxHxW)") from e
    if len(valores) != ejes or min(valores) < 1:
        raise ErrorConfiguracion(f"Rejilla mal formada: {texto!r} (use TxHxW)")
    return valores


def _parsear_semillas(texto):
    if texto is None:
        return None
    try:
        return [int(v) for v in texto.split(",") if v.strip()]
    except ValueError as e:
        raise ErrorConfiguracion(f"Lista de semillas mal formada: {texto!r}") from e


def _checkpoint_modelo(explicito, output_dir, stages):
    """Checkpoint explícito o el de la etapa más avanzada disponible."""
    if explicito is not None:
        candidatos = [explicito]
    else:
        candidatos = [os.path.join(str(output_dir), NOMBRES_CHECKPOINT[s]) for s in stages]
    for ruta in candidatos:
        if os.path.exists(ruta):
            return ruta
    buscados = ", ".join(str(c) for c in candidatos)
    raise ErrorArranque(f"No hay checkpoint utilizable: se buscó {buscados}")


@app.command()
def train(stage: Optional[int] = typer.Option(None, "--stage", help="Etapa 1, 2 o 3."),
          steps: Optional[int] = typer.Option(None, "--steps"),
          batch_size: Optional[int] = typer.Option(None, "--batch-size"),
          strategy: Optional[str] = typer.Option(None, "--strategy"),
          variant: Optional[str] = typer.Option(None, "--variant"),
          seed: Optional[int] = typer.Option(None, "--seed"),
          checkpoint_in: Optional[Path] = typer.Option(None, "--checkpoint-in"),
          config: Optional[Path] = OPCION_CONFIG):
    """Entrena una etapa."""
    cfg = construir_config(config, "train", {
        "stage": stage, "steps": steps, "batch_size": batch_size, "strategy": strategy,
        "variant": variant, "seed": seed, "checkpoint_in": checkpoint_in})
    resultado = train_stage(cfg.train, cfg.output_dir)
    consola.artefacto(resultado.checkpoint)
    consola.artefacto(resultado.log_path)
    final = suavizar(resultado.log["loss"].to_numpy())[1] if len(resultado.log) else float("nan")
    consola.resumen(f"train stage={cfg.train.stage} steps={cfg.train.steps} "
                    f"final_loss={final:.6f}")


@app.command()
def generate(task: Optional[str] = typer.Option(None, "--task"),
             segments: Optional[int] = typer.Option(None, "--segments"),
             steps: Optional[int] = typer.Option(None, "--steps"),
             seed: Optional[int] = typer.Option(None, "--seed"),
             checkpoint: Optional[Path] = typer.Option(None, "--checkpoint"),
             config: Optional[Path] = OPCION_CONFIG):
    """Genera un vídeo largo o completa un clip con verdad terreno."""
    cfg = construir_config(config, "generate", {
        "task": task, "segments": segments, "steps": steps, "seed": seed,
        "checkpoint": checkpoint})
    ajustes = cfg.generate
    etapas = (3, 2) if ajustes.task == "multishot" else (2, 3)
    model = cargar_modelo(_checkpoint_modelo(ajustes.checkpoint, cfg.output_dir, etapas))
    if model.dit is None:
        raise ErrorArranque("El checkpoint no contiene el DiT: entrene la etapa 2")
    if ajustes.strategy is not None:
        model.strategy = parse_strategy(ajustes.strategy)
    if "gap" in ajustes.model_fields_set:
        model.gap = ajustes.gap
    salida = str(cfg.output_dir)

    if ajustes.task in ("prediction", "multishot"):
        resultado = generate_long(model, ajustes.segments, ajustes.task, ajustes.seed,
                                  ajustes.segment_grid, ajustes.n_text, ajustes.steps)
        consola.artefacto(save_token_grid(os.path.join(salida, f"generated_{ajustes.task}.lvck"),
                                          resultado.video))
        for i, bundle in enumerate(resultado.bundles):
            if len(bundle):
                consola.artefacto(save_bundle(
                    os.path.join(salida, f"bundle_{ajustes.task}_{i}.lvck"), bundle))
        consola.resumen(f"generate task={ajustes.task} segments={ajustes.segments} "
                        f"frames={resultado.video.shape[0]} "
                        f"context_tokens={resultado.bundles[-1].n_tokens}")
        return

    T, H, W = ajustes.segment_grid
    spec = sample_clip_spec(SEMILLA_EVALUACION + ajustes.seed, grid=(3 * T, H, W),
                            d=model.flex.d_model, n_text=ajustes.n_text)
    completado = complete_clip(model, make_clip(spec), ajustes.task, ajustes.seed, ajustes.steps)
    valor = psnr(completado.generated, completado.truth, peak_of(completado.truth))
    indice = 1 if ajustes.task == "interpolation" else 0
    consola.artefacto(save_token_grid(os.path.join(salida, f"generated_{ajustes.task}.lvck"),
                                      completado.generated))
    consola.artefacto(save_csv(pd.DataFrame({"segment": [indice], "psnr_vs_truth": [valor]}),
                               os.path.join(salida, f"psnr_{ajustes.task}.csv")))
    consola.resumen(f"generate task={ajustes.task} psnr_vs_truth={valor:.3f}")


@app.command(name="eval")
def evaluar(kind: Optional[str] = typer.Option(None, "--kind",
                                               help="context, ablation o strategy."),
            clips: Optional[int] = typer.Option(None, "--clips"),
            seeds: Optional[str] = typer.Option(None, "--seeds", help="Lista: 0,1,2"),
            steps: Optional[int] = typer.Option(None, "--steps"),
            checkpoint: Optional[Path] = typer.Option(None, "--checkpoint"),
            config: Optional[Path] = OPCION_CONFIG):
    """Evalúa la utilidad del contexto, la ablación de consultas o las estrategias."""
    cfg = construir_config(config, "eval", {
        "kind": kind, "clips": clips, "seeds": _parsear_semillas(seeds), "steps": steps,
        "checkpoint": checkpoint})
    ajustes = cfg.eval
    salida = str(cfg.output_dir)
    if ajustes.kind == "context":
        model = cargar_modelo(_checkpoint_modelo(ajustes.checkpoint, cfg.output_dir, (2, 3)))
        if model.dit is None:
            raise ErrorArranque("El checkpoint no contiene el DiT: entrene la etapa 2")
        df = evaluate_context_utility(model, ajustes.clips, ajustes.seeds, steps=ajustes.steps,
                                      tasks=tuple(ajustes.tasks))
        consola.artefacto(save_csv(df, os.path.join(salida, "context_utility.csv")))
        consola.resumen(f"eval kind=context psnr_true={df['psnr_true'].mean():.3f} "
                        f"psnr_shuffled={df['psnr_shuffled'].mean():.3f} "
                        f"psnr_freeze={df['psnr_freeze'].mean():.3f}")
        return
    if ajustes.kind == "strategy":
        model = cargar_modelo(_checkpoint_modelo(ajustes.checkpoint, cfg.output_dir, (1, 2, 3)))
        df = run_strategy_sweep(model, ajustes.strategies, ajustes.seeds, ajustes.strategy_steps,
                                ajustes.strategy_batch, n_clips=ajustes.clips,
                                sample_steps=ajustes.steps)
        consola.artefacto(save_csv(df, os.path.join(salida, "strategy.csv")))
        medias = df.groupby("strategy", sort=False)["psnr_prediction"].mean()
        consola.resumen("eval kind=strategy " + " ".join(f"{s}={m:.3f}"
                                                         for s, m in medias.items()))
        return
    df = run_ablation(ajustes.variants, ajustes.seeds, ajustes.ablation_steps,
                      ajustes.ablation_batch, ajustes.ablation_strategy)
    consola.artefacto(save_csv(df, os.path.join(salida, "ablation.csv")))
    medias = df.groupby("variant", sort=False)["final_mse"].mean()
    consola.resumen("eval kind=ablation " + " ".join(f"{v}={m:.6f}" for v, m in medias.items()))


@app.command()
def plan(strategy: Optional[str] = typer.Option(None, "--strategy"),
         grid: Optional[str] = typer.Option(None, "--grid", help="TxHxW, p. ej. 256x4x4"),
         orientation: Optional[str] = typer.Option(None, "--orientation"),
         config: Optional[Path] = OPCION_CONFIG):
    """Calcula el plan de compresión de un segmento."""
    cfg = construir_config(config, "plan", {
        "strategy": strategy, "grid": _parsear_rejilla(grid), "orientation": orientation})
    ajustes = cfg.plan
    estrategia = parse_strategy(ajustes.strategy)
    resultado = plan_queries(ajustes.grid, estrategia, ajustes.orientation)
    ruta = os.path.join(str(cfg.output_dir), "plan.txt")
    os.makedirs(str(cfg.output_dir), exist_ok=True)
    with open(ruta, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_plan(resultado))
    consola.artefacto(ruta)
    T, H, W = ajustes.grid
    consola.resumen(f"plan strategy={estrategia} grid={T}x{H}x{W} N={resultado.n_queries} "
                    f"ratio={overall_ratio(resultado):.4f} "
                    f"continuous_ratio={continuous_ratio(estrategia):.4f}")


@app.command()
def bench(segments: Optional[int] = typer.Option(None, "--segments"),
          seg_tokens: Optional[int] = typer.Option(None, "--seg-tokens"),
          ratio: Optional[float] = typer.Option(None, "--ratio"),
          strategy: Optional[str] = typer.Option(None, "--strategy"),
          repetitions: Optional[int] = typer.Option(None, "--repetitions"),
          measure: Optional[bool] = typer.Option(None, "--measure/--no-measure"),
          config: Optional[Path] = OPCION_CONFIG):
    """Tabla de costes de atención (analítica y medida)."""
    cfg = construir_config(config, "bench", {
        "segments": segments, "seg_tokens": seg_tokens, "ratio": ratio, "strategy": strategy,
        "repetitions": repetitions, "measure": measure})
    ajustes = cfg.bench
    estrategia = parse_strategy(ajustes.estrategia_efectiva())
    puntos = scaling_table(ajustes.seg_tokens, estrategia, ajustes.segments, ajustes.d_model,
                           ajustes.blocks, ajustes.frame_hw)
    tiempos = None
    if ajustes.measure:
        tiempos = microbench(ajustes, list(range(1, ajustes.segments + 1)), ajustes.repetitions)
    consola.artefacto(write_cost_csv(puntos, tiempos, os.path.join(str(cfg.output_dir),
                                                                      "cost.csv")))
    ultimo = puntos[-1]
    consola.resumen(f"bench segments={ajustes.segments} strategy={estrategia} "
                    f"flops_ratio={ultimo.flops_vanilla / ultimo.flops_compressed:.3f} "
                    f"mem_ratio={ultimo.mem_vanilla / ultimo.mem_compressed:.3f}")


def run(argv=None):
    """
    Ejecuta la CLI y devuelve el código de salida.

    :param argv: Argumentos sin el nombre del programa (por defecto sys.argv[1:]).
    """
    comando = typer.main.get_command(app)
    try:
        comando.main(args=list(sys.argv[1:] if argv is None else argv), prog_name="lovic",
                     standalone_mode=False)
        return 0
    except click.ClickException as e:
        e.show(file=sys.stderr)
        return 1
    except click.exceptions.Abort:
        consola.error("Operación cancelada")
        return 1
    except ErrorConfiguracion as e:
        consola.error(str(e))
        return 1
    except ErrorLovic as e:
        consola.error(str(e))
        return 2
    except OSError as e:
        consola.error(f"Error de entrada/salida: {e}")
        return 2
    except Exception as e:  # pylint: disable=broad-except
        consola.error(f"Error inesperado ({type(e).__name__}): {e}")
        return 2
