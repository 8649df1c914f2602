"""Explanation report PDF utilities."""

import io
from pathlib import Path
from typing import Sequence

import matplotlib as mpl
mpl.use('Agg')
import matplotlib.pyplot as plt
import pandas as pd
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4, landscape
from reportlab.lib.utils import ImageReader
from reportlab.pdfgen import canvas
from reportlab.platypus import Table, TableStyle

mpl.rcParams['agg.path.chunksize'] = 10000


class Layout:
    """PDF layout constants for the explanation report."""
    PAGE_WIDTH, PAGE_HEIGHT = landscape(A4)

    MARGIN_LEFT = 15
    MARGIN_BOTTOM = 15

    TITLE_X = MARGIN_LEFT + 5
    TITLE_Y = 570
    SUBTITLE_Y = 552

    GRAPH_X = MARGIN_LEFT
    GRAPH_Y = 40
    GRAPH_W = 600
    GRAPH_H = 500

    TABLE_X = 630
    TABLE_W = 197
    TABLE_ROW_H = 16
    TABLE_TOP = 540

    FOOTER_TEXT_Y = 20


def draw_text_on_pdf(pdf_canvas, text, x, y, font="Helvetica", size=10, left_aligned=False,
                     max_width=Layout.PAGE_WIDTH - 2 * Layout.MARGIN_LEFT):
    """Draw one line of text, vertically centred on `y`; overlong text is cut with '...'."""
    line = "" if text is None else str(text)
    while len(line) > 3 and pdf_canvas.stringWidth(line, font, size) > max_width:
        line = line[:-4] + "..."
    pdf_canvas.setFont(font, size)
    width = pdf_canvas.stringWidth(line, font, size)
    start = x if left_aligned else x - width / 2
    pdf_canvas.drawString(start, y - size * 0.35, line)


def draw_table(pdf_canvas, dataframe: pd.DataFrame, x, y_top, width, row_height=Layout.TABLE_ROW_H):
    """Render a DataFrame (header row included) as a table hanging down from `y_top`."""
    if dataframe is None or dataframe.empty:
        return
    data = [list(map(str, dataframe.columns))] + dataframe.astype(str).values.tolist()
    rows = len(data)
    cols = len(data[0])
    table = Table(data, colWidths=width / cols, rowHeights=[row_height] * rows)
    table.setStyle(TableStyle([
        ('ALIGN', (0, 0), (-1, -1), 'CENTER'),
        ('VALIGN', (0, 0), (-1, -1), 'MIDDLE'),
        ('FONTNAME', (0, 0), (-1, -1), 'Helvetica'),
        ('FONTNAME', (0, 0), (-1, 0), 'Helvetica-Bold'),
        ('FONTSIZE', (0, 0), (-1, -1), 7),
        ('GRID', (0, 0), (-1, -1), 0.5, colors.black),
        ('BACKGROUND', (0, 0), (-1, 0), colors.lightblue),
        ('TEXTCOLOR', (0, 0), (-1, -1), colors.black),
    ]))
    table.wrapOn(pdf_canvas, width, rows * row_height)
    table.drawOn(pdf_canvas, x, y_top - rows * row_height)


def insert_plot(figure, pdf_canvas):
    """Rasterise a matplotlib figure into the graph area and close it."""
    png_figure = io.BytesIO()
    figure.savefig(png_figure, format='PNG', dpi=150, metadata={"Software": None})
    png_figure.seek(0)
    plt.close(figure)
    pdf_canvas.drawImage(
        ImageReader(png_figure),
        Layout.GRAPH_X,
        Layout.GRAPH_Y,
        Layout.GRAPH_W,
        Layout.GRAPH_H,
        preserveAspectRatio=True,
        mask="auto",
    )


def write_explain_report(path, figure, stats: pd.DataFrame, title: str, notes: Sequence[str] = ()) -> Path:
    """One landscape page: title, relation figure on the left, statistics table on the right.

    The canvas is created with invariant=1 so identical inputs give identical bytes.
    """
    path = Path(path)
    pdf = canvas.Canvas(str(path), pagesize=landscape(A4), invariant=1)
    pdf.setTitle(title)
    draw_text_on_pdf(pdf, title, Layout.TITLE_X, Layout.TITLE_Y, font="Helvetica-Bold", size=14, left_aligned=True)
    for i, note in enumerate(notes):
        draw_text_on_pdf(pdf, note, Layout.TITLE_X, Layout.SUBTITLE_Y - 12 * i, size=8, left_aligned=True)
    insert_plot(figure, pdf)
    draw_table(pdf, stats, Layout.TABLE_X, Layout.TABLE_TOP, Layout.TABLE_W)
    draw_text_on_pdf(pdf, "Page 1 of 1", Layout.PAGE_WIDTH / 2, Layout.FOOTER_TEXT_Y, size=8)
    pdf.showPage()
    pdf.save()
    plt.close('all')
    return path
