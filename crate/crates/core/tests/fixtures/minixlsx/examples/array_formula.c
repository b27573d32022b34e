/*
 * Write an array formula with a bold format.
 */
#include <stdio.h>

#include "xlsxwriter.h"

int main(void)
{
    lxw_workbook *workbook = workbook_new("array_formula.xlsx");
    lxw_worksheet *worksheet = workbook_add_worksheet(workbook, NULL);
    lxw_format *bold = workbook_add_format(workbook);

    format_set_bold(bold);
    worksheet_write_number(worksheet, 0, 1, 500, NULL);
    printf("writing %s\n", "array_formula.xlsx");
    worksheet_write_array_formula(worksheet, RANGE("A1:A3"), "{=SUM(B1:C1*B2:C2)}", bold);

    return workbook_close(workbook);
}
