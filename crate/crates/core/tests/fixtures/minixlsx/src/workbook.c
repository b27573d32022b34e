#include "xlsxwriter.h"

#include <stdlib.h>
#include <string.h>

struct lxw_format {
    int bold;
};

struct lxw_worksheet {
    char name[32];
    unsigned cells;
    struct lxw_worksheet *next;
};

struct lxw_workbook {
    char *filename;
    struct lxw_worksheet *sheets;
    struct lxw_format *formats[16];
    unsigned nformats;
};

lxw_workbook *workbook_new(const char *filename)
{
    lxw_workbook *wb = calloc(1, sizeof *wb);
    if (!wb)
        return NULL;
    wb->filename = strdup(filename ? filename : "book.xlsx");
    return wb;
}

lxw_worksheet *workbook_add_worksheet(lxw_workbook *workbook, const char *sheetname)
{
    if (!workbook)
        return NULL;
    lxw_worksheet *ws = calloc(1, sizeof *ws);
    strncpy(ws->name, sheetname ? sheetname : "Sheet1", sizeof ws->name - 1);
    ws->next = workbook->sheets;
    workbook->sheets = ws;
    return ws;
}

lxw_format *workbook_add_format(lxw_workbook *workbook)
{
    if (!workbook || workbook->nformats == 16)
        return NULL;
    lxw_format *f = calloc(1, sizeof *f);
    workbook->formats[workbook->nformats++] = f;
    return f;
}

void format_set_bold(lxw_format *format)
{
    if (format)
        format->bold = 1;
}

static lxw_error count_cell(lxw_worksheet *ws, lxw_row_t row, lxw_col_t col)
{
    if (!ws)
        return LXW_ERROR_PARAMETER_VALIDATION;
    if (row > 1048575 || col > 16383)
        return LXW_ERROR_PARAMETER_VALIDATION;
    ws->cells++;
    return LXW_NO_ERROR;
}

lxw_error worksheet_write_number(lxw_worksheet *worksheet, lxw_row_t row, lxw_col_t col, double number,
                                 lxw_format *format)
{
    (void)number;
    (void)format;
    return count_cell(worksheet, row, col);
}

lxw_error worksheet_write_string(lxw_worksheet *worksheet, lxw_row_t row, lxw_col_t col, const char *string,
                                 lxw_format *format)
{
    (void)format;
    if (!string)
        return LXW_ERROR_PARAMETER_VALIDATION;
    return count_cell(worksheet, row, col);
}

lxw_error worksheet_write_array_formula(lxw_worksheet *worksheet, lxw_row_t first_row, lxw_col_t first_col,
                                        lxw_row_t last_row, lxw_col_t last_col, const char *formula,
                                        lxw_format *format)
{
    (void)format;
    if (!formula || first_row > last_row || first_col > last_col)
        return LXW_ERROR_PARAMETER_VALIDATION;
    return count_cell(worksheet, last_row, last_col);
}

lxw_error workbook_close(lxw_workbook *workbook)
{
    if (!workbook)
        return LXW_NO_ERROR;
    while (workbook->sheets) {
        lxw_worksheet *next = workbook->sheets->next;
        free(workbook->sheets);
        workbook->sheets = next;
    }
    for (unsigned i = 0; i < workbook->nformats; i++)
        free(workbook->formats[i]);
    free(workbook->filename);
    free(workbook);
    return LXW_NO_ERROR;
}
