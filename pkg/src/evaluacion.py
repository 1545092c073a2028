"""
Evaluaciones del sistema sobre clips sintéticos reservados.

- evaluate_context_utility: PSNR/SSIM de cada tarea de un plano con la historia
  real, con la historia de otro clip (barajada) y de la línea base que congela
  un fotograma del contexto (el primero del posterior en retrodicción).
- run_ablation: entrena cada variante de consultas del FlexFormer con el mismo
  número de pasos y compara el MSE de reconstrucción final.
- run_strategy_sweep: entrena un DiT por estrategia de compresión sobre el mismo
  FlexFormer y compara el PSNR de predicción.
"""
import numpy as np
import pandas as pd
from tqdm import tqdm

import consola
from compression import PASADO, overall_ratio, parse_strategy, plan_queries
from config import TrainConfig
from datos_sinteticos import SEMILLA_EVALUACION, make_clip, sample_clip_spec, split_clip
from dit import DiTParams
from entrenamiento import entrenar, modelo_inicial
from flexformer import decode_segment, encode_segment, reconstruction_loss
from generacion import complete_clip
from metricas import freeze_first_frame, freeze_last_frame, peak_of, psnr, ssim
from modelo import LoViCModel, dividir_tarea
from numerics import no_grad


def clips_reservados(n_clips, grid, d, n_text=3):
    """Clips de evaluación con semillas disjuntas de las de entrenamiento."""
    return [make_clip(sample_clip_spec(SEMILLA_EVALUACION + i, grid=grid, d=d, n_text=n_text))
            for i in range(n_clips)]


def linea_base_congelada(task, context, T):
    """
    Línea base sin modelo de cada tarea de un plano.

    prediction e interpolation repiten el último fotograma del segmento anterior
    al objetivo; retrodiction repite el primero del segmento posterior.
    """
    if task == "retrodiction":
        return freeze_first_frame(context[0].video.data, T)
    if task == "interpolation":
        return freeze_last_frame(context[0].video.data, T)
    return freeze_last_frame(context[-1].video.data, T)


def evaluate_context_utility(model, n_clips=32, seeds=(0, 1, 2), grid=(12, 4, 4), n_text=3,
                             steps=16, tasks=("prediction",)):
    """
    Compara la tarea con historia real, historia barajada y la línea base congelada.

    :param tasks: Tareas de un plano a evaluar.
    :return: DataFrame con una fila por (tarea, semilla, clip).
    """
    clips = clips_reservados(n_clips, grid, model.flex.d_model, n_text)
    filas = []
    for tarea in tasks:
        historias = [dividir_tarea(split_clip(clip, 3), tarea)[0] for clip in clips]
        for semilla in seeds:
            for i in tqdm(range(n_clips), desc=f"Evaluando {tarea} (semilla {semilla})",
                          unit="clip"):
                real = complete_clip(model, clips[i], tarea, seed=semilla * 100000 + i,
                                     steps=steps)
                barajada = complete_clip(model, clips[i], tarea, seed=semilla * 100000 + i,
                                         steps=steps,
                                         context_override=historias[(i + 1) % n_clips])
                congelado = linea_base_congelada(tarea, real.context, real.truth.shape[0])
                pico = peak_of(real.truth)
                filas.append({
                    "task": tarea,
                    "seed": semilla,
                    "clip": i,
                    "psnr_true": psnr(real.generated, real.truth, pico),
                    "psnr_shuffled": psnr(barajada.generated, real.truth, pico),
                    "psnr_freeze": psnr(congelado, real.truth, pico),
                    "ssim_true": ssim(real.generated, real.truth, pico),
                    "ssim_freeze": ssim(congelado, real.truth, pico),
                })
    df = pd.DataFrame(filas)
    for tarea, grupo in df.groupby("task", sort=False):
        consola.dato(f"{tarea}: PSNR medio real {grupo['psnr_true'].mean():.3f} dB, barajada "
                     f"{grupo['psnr_shuffled'].mean():.3f} dB, congelado "
                     f"{grupo['psnr_freeze'].mean():.3f} dB")
    return df


def mse_reconstruccion(model, n_segmentos=16, grid=(12, 4, 4), n_text=3):
    """MSE medio de reconstrucción sobre segmentos reservados (orientación pasado)."""
    clips = clips_reservados(n_segmentos, grid, model.flex.d_model, n_text)
    valores = []
    with no_grad():
        for i, clip in enumerate(clips):
            segmento = split_clip(clip, 3)[i % 3]
            chunk = encode_segment(segmento, model.strategy, PASADO, model.flex)
            valores.append(reconstruction_loss(decode_segment(chunk, model.flex), segmento).item())
    return float(np.mean(valores))


def run_ablation(variants, seeds, steps, batch_size=4, strategy="uniform:4", grid=(12, 4, 4),
                 d_model=48, heads=4, blocks=2, learning_rate=3e-4, n_text=3):
    """
    Entrena cada variante con el mismo número de pasos y semillas.

    La variante 'mrope_multi' usa tantas consultas fijas como pide el plan del
    segmento con la estrategia dada.

    :return: DataFrame (variant, seed, final_mse, final_train_loss).
    """
    segmento = (grid[0] // 3,) + tuple(grid[1:])
    n_fijas = plan_queries(segmento, parse_strategy(strategy)).n_queries
    filas = []
    for variante in variants:
        for semilla in seeds:
            config = TrainConfig(stage=1, steps=steps, batch_size=batch_size,
                                 learning_rate=learning_rate, strategy=strategy, d_model=d_model,
                                 heads=heads, enc_blocks=blocks, dec_blocks=blocks,
                                 variant=variante, grid=grid, n_text=n_text, seed=semilla,
                                 n_fixed_queries=n_fijas if variante == "mrope_multi" else None)
            model = modelo_inicial(config)
            log = entrenar(config, model)
            filas.append({
                "variant": variante,
                "seed": semilla,
                "final_mse": mse_reconstruccion(model, grid=grid, n_text=n_text),
                "final_train_loss": float(log["loss"].iloc[-1]) if len(log) else float("nan"),
            })
            consola.dato(f"{variante} (semilla {semilla}): MSE {filas[-1]['final_mse']:.6f}")
    return pd.DataFrame(filas)


def run_strategy_sweep(model, strategies, seeds, steps, batch_size=4, learning_rate=3e-4,
                       n_clips=8, grid=(12, 4, 4), n_text=3, dit_blocks=2, sample_steps=16):
    """
    Entrena un DiT nuevo por estrategia sobre el mismo FlexFormer congelado.

    Cada variante hace la etapa 2 en memoria con sólo la tarea de predicción y se
    evalúa con el PSNR medio de la predicción sobre clips reservados.

    :param model: LoViCModel con el FlexFormer de la etapa 1.
    :param strategies: Textos de estrategia ('uniform:8', 'linear:16:1', ...).
    :return: DataFrame (strategy, seed, n_queries, overall_ratio, psnr_prediction,
        final_train_loss).
    """
    flex = model.flex
    segmento = (grid[0] // 3,) + tuple(grid[1:])
    clips = clips_reservados(n_clips, grid, flex.d_model, n_text)
    filas = []
    for texto in strategies:
        estrategia = parse_strategy(texto)
        plan = plan_queries(segmento, estrategia)
        for semilla in seeds:
            config = TrainConfig(stage=2, steps=steps, batch_size=batch_size,
                                 learning_rate=learning_rate, strategy=texto,
                                 d_model=flex.d_model, heads=flex.heads, dit_blocks=dit_blocks,
                                 grid=grid, n_text=n_text, seed=semilla,
                                 task_mix={"prediction": 1.0})
            candidato = LoViCModel(flex, DiTParams(flex.d_model, flex.heads, dit_blocks,
                                                   seed=semilla + 1), estrategia, model.gap)
            log = entrenar(config, candidato)
            valores = []
            for i, clip in enumerate(clips):
                completado = complete_clip(candidato, clip, "prediction",
                                           seed=semilla * 100000 + i, steps=sample_steps)
                valores.append(psnr(completado.generated, completado.truth,
                                    peak_of(completado.truth)))
            filas.append({
                "strategy": texto,
                "seed": semilla,
                "n_queries": plan.n_queries,
                "overall_ratio": overall_ratio(plan),
                "psnr_prediction": float(np.mean(valores)),
                "final_train_loss": float(log["loss"].iloc[-1]) if len(log) else float("nan"),
            })
            consola.dato(f"{texto} (semilla {semilla}): {plan.n_queries} consultas, "
                         f"PSNR {filas[-1]['psnr_prediction']:.3f} dB")
    return pd.DataFrame(filas)
